//! Planted corpus: every conversation repeats keywords of its intention
//! label, and each label owns a fixed pair of procedurally drawn stickers.
//! With bag-of-tokens stub encoders the gold label is linearly decodable
//! from the context, so a correct model retrieves perfectly.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AppConfig, BackendsConfig, GenerativeBackend, TextBackend, VisualBackend};
use crate::dataset::{load_corpus, save_corpus, Conversation, Corpus, CorpusFormat, Scenario, Split, Sticker, Utterance};
use crate::error::{Error, Result};
use crate::fusion::FuseMode;
use crate::matcher::{ModelSettings, TrainingConfig};

pub const PLANTED_LABELS: [&str; 5] = ["joy", "sadness", "anger", "gratitude", "surprise"];

const KEYWORDS: [&[&str]; 5] = [
    &["haha", "awesome", "yay", "lol"],
    &["sigh", "miss", "tears", "lonely"],
    &["furious", "hate", "ugh", "annoying"],
    &["thanks", "appreciate", "grateful", "kind"],
    &["wow", "whoa", "unexpected", "omg"],
];

const FILLER: &[&str] = &[
    "today", "we", "went", "to", "the", "shop", "and", "then", "it", "was", "dinner", "later", "my", "friend", "said",
    "that", "movie", "tomorrow", "maybe", "work", "home", "train", "weather", "again",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub seed: u64,
    pub stickers_per_label: usize,
    pub train_per_label: usize,
    pub valid_per_label: usize,
    pub test_per_label: usize,
}

impl Default for PlantedSpec {
    /// 20 training conversations over 10 stickers.
    fn default() -> Self {
        Self { seed: 7, stickers_per_label: 2, train_per_label: 4, valid_per_label: 1, test_per_label: 2 }
    }
}

/// Sticker `k` of label `l`.
pub fn planted_sticker_id(label: usize, k: usize) -> String {
    format!("s{label}{k}")
}

fn draw_sticker(rng: &mut ChaCha8Rng) -> RgbImage {
    let bg = Rgb([rng.random(), rng.random(), rng.random()]);
    let mut img = RgbImage::from_pixel(48, 48, bg);
    for _ in 0..4 {
        let color = Rgb([rng.random(), rng.random(), rng.random()]);
        let (x0, y0) = (rng.random_range(0..40u32), rng.random_range(0..40u32));
        let (w, h) = (rng.random_range(4..16u32), rng.random_range(4..16u32));
        for y in y0..(y0 + h).min(48) {
            for x in x0..(x0 + w).min(48) {
                img.put_pixel(x, y, color);
            }
        }
    }
    img
}

fn sentence(rng: &mut ChaCha8Rng, label: usize, keyword: bool) -> String {
    let n = rng.random_range(3..=6);
    let mut words: Vec<&str> = (0..n).map(|_| *FILLER.choose(rng).unwrap()).collect();
    if keyword {
        for _ in 0..2 {
            let pos = rng.random_range(0..=words.len());
            words.insert(pos, KEYWORDS[label].choose(rng).unwrap());
        }
    }
    words.join(" ")
}

fn conversation(
    rng: &mut ChaCha8Rng,
    id: String,
    split: Split,
    label: usize,
    gold: String,
    scenario: Scenario,
    // Stickers an earlier turn may reuse (the label's own).
    stickers: &[String],
) -> Conversation {
    let speakers = ["User_1", "User_2", "User_3"];
    let turns = rng.random_range(3..=7usize);
    let target = speakers[rng.random_range(0..speakers.len())].to_string();
    let mut utterances = Vec::with_capacity(turns);
    for i in 0..turns - 1 {
        let speaker = if i + 2 == turns && rng.random_bool(0.5) {
            speakers.iter().find(|s| **s != target).unwrap().to_string()
        } else {
            speakers[rng.random_range(0..speakers.len())].to_string()
        };
        if i > 0 && i + 2 < turns && rng.random_bool(0.15) {
            let sticker = stickers[rng.random_range(0..stickers.len())].clone();
            utterances.push(Utterance { index: i, speaker_id: speaker, text: String::new(), sticker_id: Some(sticker) });
            continue;
        }
        let keyword = i + 3 >= turns || rng.random_bool(0.9);
        utterances.push(Utterance { index: i, speaker_id: speaker, text: sentence(rng, label, keyword), sticker_id: None });
    }
    let text = match scenario {
        Scenario::SR => sentence(rng, label, true),
        Scenario::DR => String::new(),
    };
    utterances.push(Utterance { index: turns - 1, speaker_id: target.clone(), text, sticker_id: Some(gold.clone()) });
    Conversation {
        id,
        utterances,
        target_speaker: target,
        gold_sticker_id: gold,
        intention_label: PLANTED_LABELS[label].to_string(),
        scenario,
        split,
    }
}

/// Writes the corpus (manifest, splits, PNG stickers) under `root` and loads it back.
pub fn write_planted_corpus(root: &Path, spec: &PlantedSpec) -> Result<Corpus> {
    if spec.stickers_per_label == 0 || spec.train_per_label == 0 {
        return Err(Error::Config("planted corpus needs stickers and training conversations".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sticker_dir = root.join("stickers");
    std::fs::create_dir_all(&sticker_dir).map_err(|e| Error::load(&sticker_dir, e))?;
    let mut stickers = std::collections::BTreeMap::new();
    for l in 0..PLANTED_LABELS.len() {
        for k in 0..spec.stickers_per_label {
            let id = planted_sticker_id(l, k);
            let file = format!("{id}.png");
            let path = sticker_dir.join(&file);
            draw_sticker(&mut rng)
                .save(&path)
                .map_err(|e| Error::Asset { path: path.display().to_string(), message: e.to_string() })?;
            let verbal_text = (k % 2 == 1).then(|| KEYWORDS[l][k % KEYWORDS[l].len()].to_string());
            stickers.insert(id.clone(), Sticker { id, file, verbal_text, image_ref: path });
        }
    }
    let mut conversations = Vec::new();
    for (split, per_label) in [(Split::Train, spec.train_per_label), (Split::Valid, spec.valid_per_label), (Split::Test, spec.test_per_label)] {
        let mut n = 0;
        for i in 0..per_label {
            for l in 0..PLANTED_LABELS.len() {
                let gold = planted_sticker_id(l, i % spec.stickers_per_label);
                let scenario = if n % 2 == 0 { Scenario::SR } else { Scenario::DR };
                let own: Vec<String> = (0..spec.stickers_per_label).map(|k| planted_sticker_id(l, k)).collect();
                conversations.push(conversation(&mut rng, format!("{split}-{n:03}"), split, l, gold, scenario, &own));
                n += 1;
            }
        }
    }
    let corpus = Corpus {
        name: "planted".into(),
        conversations,
        stickers,
        taxonomy: PLANTED_LABELS.iter().map(|s| s.to_string()).collect(),
        sticker_dir,
    };
    corpus.validate()?;
    save_corpus(&corpus, root)?;
    load_corpus(root, CorpusFormat::Stickerint)
}

/// Configuration the planted corpus is meant to be trained with.
pub fn planted_config() -> AppConfig {
    AppConfig {
        training: TrainingConfig { learning_rate: 1e-2, epochs: 50, seed: 1, ..TrainingConfig::default() },
        model: ModelSettings { dim: 16, heads: 2, fuse_mode: FuseMode::PerRegionWeighted, ..ModelSettings::default() },
        backends: BackendsConfig {
            text: TextBackend::Stub { seed: 3, dim: 512, max_len: 512 },
            visual: VisualBackend::Stub { seed: 3, dim: 32, regions: 4 },
            describer: GenerativeBackend::Stub { seed: 3 },
            generator: GenerativeBackend::Stub { seed: 3 },
        },
        ..AppConfig::default()
    }
}

/// Keywords planted for `label`.
pub fn planted_keywords(label: usize) -> &'static [&'static str] {
    KEYWORDS[label]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_corpus_shape() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = write_planted_corpus(dir.path(), &PlantedSpec::default()).unwrap();
        assert_eq!(corpus.split(Split::Train).count(), 20);
        assert_eq!(corpus.stickers.len(), 10);
        let again = write_planted_corpus(&dir.path().join("again"), &PlantedSpec::default()).unwrap();
        assert_eq!(again.conversations, corpus.conversations);
        for c in &corpus.conversations {
            let label = corpus.label_index(&c.intention_label).unwrap();
            assert!(c.gold_sticker_id.starts_with(&format!("s{label}")));
        }
    }
}
