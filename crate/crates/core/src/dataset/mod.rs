//! Conversation corpora and sticker sets: loading, validation, statistics,
//! and pairwise image similarity.

mod load;
mod ssim;
mod stats;
mod types;

pub use load::{load_corpus, mod_adapter, read_manifest, save_corpus, CorpusFormat, Manifest, MANIFEST_FILE};
pub use ssim::{
    similarity_report, ssim, ssim_files, ssim_planes, GrayPlane, HistogramBin, SimilarityReport, SSIM_SIDE,
};
pub use stats::{corpus_stats, split_stats, SplitStats, StatsReport};
pub use types::{is_anonymized_speaker, Conversation, Corpus, Scenario, Split, Sticker, Utterance};
