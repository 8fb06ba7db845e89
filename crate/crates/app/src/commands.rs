//! The work behind each CLI subcommand, callable without a process boundary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sticker_core::config::AppConfig;
use sticker_core::dataset::{load_corpus, Corpus, CorpusFormat, Split};
use sticker_core::matcher::{build_index, train, LossForm, Sample, StickerIndex, TrainingConfig, TrainingData, TrainingLog};
use sticker_core::metrics::MetricsReport;
use sticker_core::pipeline::{
    evaluate, feature_space, featurize_split, select_attributes, Ablation, Backends, EvalOptions, EvalOutcome,
};
use sticker_core::{Checkpoint, FeatureSpace, Model, QueryFeatures};

use crate::error::{AppError, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAINING_LOG_FILE: &str = "training_log.json";

/// Loads a corpus, substituting the configured taxonomy when one is set.
pub fn load_dataset(root: &Path, format: CorpusFormat, cfg: &AppConfig) -> Result<Corpus> {
    let mut corpus = load_corpus(root, format)?;
    if let Some(taxonomy) = cfg.taxonomy()? {
        corpus.taxonomy = taxonomy;
        corpus.validate()?;
    }
    Ok(corpus)
}

/// An explicit config file wins; otherwise the `config.toml` written next
/// to the checkpoint by `train`; otherwise defaults.
pub fn resolve_config(explicit: Option<&Path>, checkpoint: Option<&Path>) -> Result<AppConfig> {
    if let Some(path) = explicit {
        return Ok(AppConfig::load(path)?);
    }
    if let Some(sibling) = checkpoint.and_then(Path::parent).map(|d| d.join(CONFIG_FILE)) {
        if sibling.is_file() {
            return Ok(AppConfig::load(&sibling)?);
        }
    }
    Ok(AppConfig::default())
}

/// Backends for `cfg`, verified against the checkpoint's recorded identities.
pub fn checkpoint_backends(cfg: &AppConfig, checkpoint: &Checkpoint) -> Result<Backends> {
    let backends = Backends::from_config(cfg)?;
    backends.check_identity(&checkpoint.backends)?;
    Ok(backends)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub training_log: PathBuf,
    pub config: PathBuf,
    pub model_version: String,
    pub best_epoch: usize,
}

/// Trains from the configured seed and writes the best checkpoint, the
/// per-epoch log and the resolved configuration into `out`.
pub fn train_run(corpus: &Corpus, cfg: &AppConfig, out: &Path) -> Result<(Checkpoint, TrainingLog, TrainArtifacts)> {
    cfg.validate()?;
    let backends = Backends::from_config(cfg)?;
    let space = select_attributes(&feature_space::<f64>(corpus, &backends)?, &cfg.model.attributes);
    let window = cfg.training.context_window;
    let use_knowledge = cfg.model.use_knowledge;
    let train_q = featurize_split::<f64>(corpus, Split::Train, &backends, use_knowledge, window)?;
    let valid_q = featurize_split::<f64>(corpus, Split::Valid, &backends, use_knowledge, window)?;
    let init = Model::random(cfg.model.clone(), space.text_dim(), space.visual_dim(), corpus.taxonomy.len(), cfg.training.seed)?;
    let outcome = train(init, &TrainingData { space: &space, train: &train_q, valid: &valid_q }, &cfg.training)?;
    let checkpoint = Checkpoint::new(outcome.best, cfg.training.clone(), corpus.taxonomy.clone(), backends.identity());
    std::fs::create_dir_all(out)?;
    let artifacts = TrainArtifacts {
        checkpoint: out.join(CHECKPOINT_FILE),
        training_log: out.join(TRAINING_LOG_FILE),
        config: out.join(CONFIG_FILE),
        model_version: checkpoint.model_version.clone(),
        best_epoch: outcome.log.best_epoch,
    };
    checkpoint.save(&artifacts.checkpoint)?;
    std::fs::write(&artifacts.training_log, serde_json::to_vec_pretty(&outcome.log)?)?;
    std::fs::write(&artifacts.config, cfg.to_toml())?;
    Ok((checkpoint, outcome.log, artifacts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub split: Split,
    pub ablations: Vec<Ablation>,
    /// Defaults to the checkpoint's training window.
    pub context_window: Option<usize>,
    /// Form of the reported split loss; defaults to the checkpoint's.
    pub loss_form: Option<LossForm>,
    pub ns: Vec<usize>,
    pub recall_n: Option<usize>,
    pub recall_ks: Vec<usize>,
    pub seed: u64,
}

impl Default for EvalRequest {
    fn default() -> Self {
        let d = EvalOptions::default();
        Self {
            split: d.split,
            ablations: d.ablations,
            context_window: None,
            loss_form: None,
            ns: d.ns,
            recall_n: d.recall_n,
            recall_ks: d.recall_ks,
            seed: d.seed,
        }
    }
}

/// Mean joint loss over a split, each query against every sticker outside
/// its gold label (any non-gold sticker when none is left).
pub fn split_loss(
    model: &Model,
    space: &FeatureSpace,
    queries: &[QueryFeatures],
    cfg: &TrainingConfig,
) -> Result<serde_json::Value> {
    let mut batch = Vec::with_capacity(queries.len());
    for q in queries {
        let gold = q.gold_sticker.as_deref().ok_or_else(|| AppError::Invalid(format!("query `{}` has no gold sticker", q.id)))?;
        let label = q.gold_label.ok_or_else(|| AppError::Invalid(format!("query `{}` has no gold label", q.id)))?;
        let positive = space.sticker_position(gold).ok_or_else(|| AppError::NotFound(format!("sticker `{gold}`")))?;
        let others = (0..space.stickers.len()).filter(|&i| i != positive);
        let mut negatives: Vec<usize> = others.clone().filter(|&i| !space.shares_label(&space.stickers[i].id, label)).collect();
        if negatives.is_empty() {
            negatives = others.collect();
        }
        batch.push(Sample { query: q, positive, negatives });
    }
    let l = model.loss(&batch, space, cfg, None)?;
    Ok(serde_json::json!({
        "loss_form": cfg.loss_form,
        "margin": cfg.margin,
        "retrieval": l.retrieval,
        "intention": l.intention,
        "joint": l.joint,
    }))
}

pub fn evaluate_run(corpus: &Corpus, cfg: &AppConfig, checkpoint: &Checkpoint, req: &EvalRequest) -> Result<EvalOutcome> {
    let backends = checkpoint_backends(cfg, checkpoint)?;
    let space = feature_space::<f64>(corpus, &backends)?;
    let window = req.context_window.unwrap_or(checkpoint.training.context_window);
    let mut ablated = checkpoint.model.clone();
    for a in &req.ablations {
        a.apply(&mut ablated);
    }
    let mut loss_cfg = checkpoint.training.clone();
    if let Some(form) = req.loss_form {
        loss_cfg.loss_form = form;
    }
    let queries = featurize_split::<f64>(corpus, req.split, &backends, ablated.settings.use_knowledge, window)?;
    let loss = if queries.is_empty() {
        serde_json::Value::Null
    } else {
        split_loss(&ablated, &select_attributes(&space, &ablated.settings.attributes), &queries, &loss_cfg)?
    };
    let options = EvalOptions {
        split: req.split,
        ns: req.ns.clone(),
        context_window: window,
        ablations: req.ablations.clone(),
        recall_n: req.recall_n,
        recall_ks: req.recall_ks.clone(),
        seed: req.seed,
    };
    let echo = serde_json::json!({ "dataset": corpus.name, "split_loss": loss });
    Ok(evaluate(corpus, &space, &backends, &checkpoint.model, &options, echo)?)
}

/// Writes `metrics.json`, `metrics.csv` and `rankings.json` into `dir`.
pub fn write_eval_outputs(outcome: &EvalOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.json"), serde_json::to_vec_pretty(&outcome.report)?)?;
    std::fs::write(dir.join("metrics.csv"), outcome.report.to_csv())?;
    std::fs::write(dir.join("rankings.json"), serde_json::to_vec_pretty(&outcome.rankings)?)?;
    Ok(())
}

pub fn summary_line(report: &MetricsReport) -> String {
    let p: Vec<String> = report.overall.precision.iter().map(|(n, v)| format!("P@{n} {v:.4}")).collect();
    format!("queries {} mAP {:.4} {}", report.overall.queries, report.overall.map, p.join(" "))
}

pub fn build_index_run(corpus: &Corpus, cfg: &AppConfig, checkpoint: &Checkpoint) -> Result<StickerIndex> {
    let backends = checkpoint_backends(cfg, checkpoint)?;
    let space = select_attributes(&feature_space::<f64>(corpus, &backends)?, &checkpoint.model.settings.attributes);
    Ok(build_index(&checkpoint.model, &space)?)
}
