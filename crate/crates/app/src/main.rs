use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use sticker_app::commands::{
    build_index_run, checkpoint_backends, evaluate_run, load_dataset, resolve_config, summary_line, train_run,
    write_eval_outputs, EvalRequest, CONFIG_FILE,
};
use sticker_app::engine::{Engine, LiveConversation};
use sticker_app::service::serve;
use sticker_app::session::{JsonFileStore, SessionManager};
use sticker_app::Result;
use sticker_core::config::AppConfig;
use sticker_core::dataset::{corpus_stats, similarity_report, CorpusFormat, Split};
use sticker_core::matcher::LossForm;
use sticker_core::pipeline::Ablation;
use sticker_core::synthetic::{planted_config, write_planted_corpus, PlantedSpec};
use sticker_core::Checkpoint;

#[derive(Parser)]
#[command(name = "stickerctl", version, about = "Intention-aware sticker retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Dataset {
    /// Corpus root (manifest.json, split files, sticker directory).
    dataset: PathBuf,
    #[arg(long, default_value = "stickerint")]
    format: CorpusFormat,
}

#[derive(Args)]
struct Trained {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the config.toml next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-split corpus statistics as JSON.
    Stats {
        #[command(flatten)]
        data: Dataset,
    },
    /// Pairwise sticker SSIM summary and histogram as JSON.
    SsimReport {
        #[command(flatten)]
        data: Dataset,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Writes the planted synthetic corpus and its training config.
    Synth {
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Trains a model; writes checkpoint.json, training_log.json and config.toml.
    Train {
        #[command(flatten)]
        data: Dataset,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores a split; prints a summary and optionally writes reports.
    Evaluate {
        #[command(flatten)]
        data: Dataset,
        #[command(flatten)]
        trained: Trained,
        #[arg(long, default_value = "test")]
        split: Split,
        /// intention | knowledge | attribute | attributes=G,P,F,V (repeatable).
        #[arg(long)]
        ablate: Vec<Ablation>,
        #[arg(long)]
        context_window: Option<usize>,
        #[arg(long)]
        loss_form: Option<LossForm>,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        ns: Vec<usize>,
        /// Candidate list size for R_n@k.
        #[arg(long)]
        recall_n: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5")]
        recall_ks: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for metrics.json, metrics.csv and rankings.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Precomputes sticker vectors for a checkpoint.
    BuildIndex {
        #[command(flatten)]
        data: Dataset,
        #[command(flatten)]
        trained: Trained,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-k stickers for a serialized conversation, as JSON.
    Retrieve {
        #[command(flatten)]
        data: Dataset,
        #[command(flatten)]
        trained: Trained,
        #[arg(long)]
        index: PathBuf,
        /// JSON `{"id", "utterances": [...]}`, e.g. a session dump's `conversation`.
        #[arg(long)]
        conversation: PathBuf,
        #[arg(short, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        context_window: Option<usize>,
        #[arg(long)]
        dump_relation_scores: bool,
    },
    /// Runs the session service.
    Serve {
        #[command(flatten)]
        data: Dataset,
        #[command(flatten)]
        trained: Trained,
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long)]
        port: u16,
        /// Session store file.
        #[arg(long, default_value = "sessions.json")]
        store: PathBuf,
        #[arg(long)]
        context_window: Option<usize>,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn open_engine(data: &Dataset, trained: &Trained, index: &Path, window: Option<usize>) -> Result<Engine> {
    let cfg = resolve_config(trained.config.as_deref(), Some(&trained.checkpoint))?;
    let checkpoint = Checkpoint::load(&trained.checkpoint)?;
    let backends = checkpoint_backends(&cfg, &checkpoint)?;
    let corpus = load_dataset(&data.dataset, data.format, &cfg)?;
    Engine::new(&corpus, checkpoint, sticker_core::matcher::StickerIndex::load(index)?, backends, window)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { data } => {
            let corpus = load_dataset(&data.dataset, data.format, &AppConfig::default())?;
            print_json(&corpus_stats(&corpus))
        }
        Command::SsimReport { data, bins } => {
            let corpus = load_dataset(&data.dataset, data.format, &AppConfig::default())?;
            print_json(&similarity_report(corpus.stickers.values(), bins)?)
        }
        Command::Synth { out, seed } => {
            let corpus = write_planted_corpus(&out, &PlantedSpec { seed, ..PlantedSpec::default() })?;
            std::fs::write(out.join(CONFIG_FILE), planted_config().to_toml())?;
            eprintln!("wrote {} conversations and {} stickers to {}", corpus.conversations.len(), corpus.stickers.len(), out.display());
            Ok(())
        }
        Command::Train { data, config, out } => {
            let cfg = AppConfig::load(&config)?;
            let corpus = load_dataset(&data.dataset, data.format, &cfg)?;
            let (_, _, artifacts) = train_run(&corpus, &cfg, &out)?;
            print_json(&artifacts)
        }
        Command::Evaluate { data, trained, split, ablate, context_window, loss_form, ns, recall_n, recall_ks, seed, out } => {
            let cfg = resolve_config(trained.config.as_deref(), Some(&trained.checkpoint))?;
            let corpus = load_dataset(&data.dataset, data.format, &cfg)?;
            let checkpoint = Checkpoint::load(&trained.checkpoint)?;
            let req = EvalRequest { split, ablations: ablate, context_window, loss_form, ns, recall_n, recall_ks, seed };
            let outcome = evaluate_run(&corpus, &cfg, &checkpoint, &req)?;
            if let Some(dir) = out {
                write_eval_outputs(&outcome, &dir)?;
            }
            println!("{}", summary_line(&outcome.report));
            print!("{}", outcome.report.to_csv());
            Ok(())
        }
        Command::BuildIndex { data, trained, out } => {
            let cfg = resolve_config(trained.config.as_deref(), Some(&trained.checkpoint))?;
            let corpus = load_dataset(&data.dataset, data.format, &cfg)?;
            let index = build_index_run(&corpus, &cfg, &Checkpoint::load(&trained.checkpoint)?)?;
            index.save(&out)?;
            eprintln!("indexed {} stickers into {}", index.len(), out.display());
            Ok(())
        }
        Command::Retrieve { data, trained, index, conversation, k, context_window, dump_relation_scores } => {
            let engine = open_engine(&data, &trained, &index, context_window)?;
            let conv: LiveConversation = serde_json::from_slice(&std::fs::read(&conversation)?)?;
            print_json(&engine.suggest(&conv.id, &conv.utterances, k, dump_relation_scores)?)
        }
        Command::Serve { data, trained, index, host, port, store, context_window } => {
            let engine = open_engine(&data, &trained, &index, context_window)?;
            let manager = Arc::new(SessionManager::new(Arc::new(engine), Box::new(JsonFileStore::open(&store)?))?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(manager, SocketAddr::new(host, port)))?;
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
