//! End-to-end wiring: backends from configuration, featurization of
//! conversations and stickers, and corpus-level evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{content_key, EmbeddingCache, StringCache};
use crate::config::{AppConfig, BackendsConfig, GenerativeBackend, TextBackend, VisualBackend};
use crate::context::{with_knowledge, QueryContext};
use crate::dataset::{Conversation, Corpus, Split, Sticker};
use crate::encoders::{
    describe_attributes, encode_sticker, encode_text, Attribute, AttributeDescriber, CachedDescriber, CachedTextEncoder,
    CachedVisualEncoder, HttpDescriber, HttpTextEncoder, HttpVisualEncoder, StickerAsset, StubDescriber,
    StubTextEncoder, StubVisualEncoder, TextEncoder, VisualEncoder,
};
use crate::error::{Error, Result};
use crate::intention::encode_intention;
use crate::knowledge::{commonsense_bundle, CachedGenerator, CommonsenseGenerator, HttpGenerator, StubGenerator};
use crate::matcher::{
    build_index, rank_queries, BackendIdentity, FeatureSpace, MatchMode, Model, QueryFeatures, StickerFeatures,
    StickerIndex,
};
use crate::metrics::{recall_k_of_n, MetricsReport, QueryInput, RankedResult, RecallTable, RelevanceJudgment};
use crate::scalar::{widen, Scalar};

/// The frozen external models a run depends on.
#[derive(Clone)]
pub struct Backends {
    pub text: Arc<dyn TextEncoder>,
    pub visual: Arc<dyn VisualEncoder>,
    pub describer: Arc<dyn AttributeDescriber>,
    pub generator: Arc<dyn CommonsenseGenerator>,
    pub prompt_template: String,
}

fn cache_file(dir: &Path, kind: &str, id: &str) -> std::path::PathBuf {
    dir.join(format!("{kind}-{}.cache", &content_key(&[id])[..16]))
}

impl Backends {
    /// All-stub backends with one seed.
    pub fn stub(seed: u64, text_dim: usize, visual_dim: usize, regions: usize) -> Self {
        Self {
            text: Arc::new(StubTextEncoder::new(seed, text_dim, 512)),
            visual: Arc::new(StubVisualEncoder::new(seed, visual_dim, regions)),
            describer: Arc::new(StubDescriber::new(seed)),
            generator: Arc::new(StubGenerator::new(seed)),
            prompt_template: crate::encoders::DEFAULT_PROMPT_TEMPLATE.to_string(),
        }
    }

    /// Builds the configured backends, wrapped in on-disk caches when
    /// `cache_dir` is set.
    pub fn from_config(cfg: &AppConfig) -> Result<Self> {
        Self::build(&cfg.backends, &cfg.prompt_template, cfg.cache_dir.as_deref())
    }

    pub fn build(cfg: &BackendsConfig, prompt_template: &str, cache_dir: Option<&Path>) -> Result<Self> {
        let text: Arc<dyn TextEncoder> = match &cfg.text {
            TextBackend::Stub { seed, dim, max_len } => Arc::new(StubTextEncoder::new(*seed, *dim, *max_len)),
            TextBackend::Http { id, url, dim, max_len } => Arc::new(HttpTextEncoder::new(id, url, *dim, *max_len)),
        };
        let visual: Arc<dyn VisualEncoder> = match &cfg.visual {
            VisualBackend::Stub { seed, dim, regions } => Arc::new(StubVisualEncoder::new(*seed, *dim, *regions)),
            VisualBackend::Http { id, url, dim } => Arc::new(HttpVisualEncoder::new(id, url, *dim)),
        };
        let describer: Arc<dyn AttributeDescriber> = match &cfg.describer {
            GenerativeBackend::Stub { seed } => Arc::new(StubDescriber::new(*seed)),
            GenerativeBackend::Http { id, url } => Arc::new(HttpDescriber::new(id, url)),
        };
        let generator: Arc<dyn CommonsenseGenerator> = match &cfg.generator {
            GenerativeBackend::Stub { seed } => Arc::new(StubGenerator::new(*seed)),
            GenerativeBackend::Http { id, url } => Arc::new(HttpGenerator::new(id, url)),
        };
        let mut out = Self { text, visual, describer, generator, prompt_template: prompt_template.to_string() };
        if let Some(dir) = cache_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::load(dir, e))?;
            let tc = EmbeddingCache::open(&cache_file(dir, "text", out.text.id()), out.text.id())?;
            let vc = EmbeddingCache::open(&cache_file(dir, "visual", out.visual.id()), out.visual.id())?;
            let dc = StringCache::open(&cache_file(dir, "describer", out.describer.id()))?;
            let gc = StringCache::open(&cache_file(dir, "commonsense", out.generator.id()))?;
            out.text = Arc::new(CachedTextEncoder::new(out.text, Arc::new(tc))?);
            out.visual = Arc::new(CachedVisualEncoder::new(out.visual, Arc::new(vc))?);
            out.describer = Arc::new(CachedDescriber::new(out.describer, Arc::new(dc)));
            out.generator = Arc::new(CachedGenerator::new(out.generator, Arc::new(gc)));
        }
        Ok(out)
    }

    pub fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            text_encoder: self.text.id().to_string(),
            visual_encoder: self.visual.id().to_string(),
            describer: self.describer.id().to_string(),
            generator: self.generator.id().to_string(),
            prompt_template: self.prompt_template.clone(),
        }
    }

    /// A checkpoint is only meaningful against the backends it was trained with.
    pub fn check_identity(&self, expected: &BackendIdentity) -> Result<()> {
        let actual = self.identity();
        if &actual != expected {
            return Err(Error::Version {
                expected: serde_json::to_string(expected)?,
                found: serde_json::to_string(&actual)?,
            });
        }
        Ok(())
    }
}

/// Text the context encoder sees: the rendered context, followed by the
/// separator and the assembled inferences when knowledge is enabled.
pub fn query_text(
    context: &QueryContext,
    stickers: &BTreeMap<String, Sticker>,
    backends: &Backends,
    use_knowledge: bool,
) -> Result<String> {
    let rendered = context.render(stickers);
    if !use_knowledge {
        return Ok(rendered);
    }
    let bundle = commonsense_bundle(context, backends.generator.as_ref())?;
    Ok(with_knowledge(&rendered, &bundle.assembled))
}

pub fn featurize_context<T: Scalar>(
    id: &str,
    context: &QueryContext,
    stickers: &BTreeMap<String, Sticker>,
    backends: &Backends,
    use_knowledge: bool,
) -> Result<QueryFeatures<T>> {
    let text = query_text(context, stickers, backends, use_knowledge)?;
    let h = encode_text(&text, backends.text.as_ref())?.embedding;
    Ok(QueryFeatures { id: id.to_string(), context: widen(&h.values), gold_label: None, gold_sticker: None, scenario: None })
}

/// Query features for a labelled conversation, keeping the last `window` turns.
pub fn featurize_conversation<T: Scalar>(
    conv: &Conversation,
    corpus: &Corpus,
    backends: &Backends,
    use_knowledge: bool,
    window: usize,
) -> Result<QueryFeatures<T>> {
    let ctx = QueryContext::from_conversation(conv).window(window);
    let mut q = featurize_context(&conv.id, &ctx, &corpus.stickers, backends, use_knowledge)?;
    q.gold_label = Some(corpus.label_index(&conv.intention_label)?);
    q.gold_sticker = Some(conv.gold_sticker_id.clone());
    q.scenario = Some(conv.scenario);
    Ok(q)
}

pub fn featurize_split<T: Scalar>(
    corpus: &Corpus,
    split: Split,
    backends: &Backends,
    use_knowledge: bool,
    window: usize,
) -> Result<Vec<QueryFeatures<T>>> {
    let convs: Vec<&Conversation> = corpus.split(split).collect();
    convs.par_iter().map(|c| featurize_conversation(c, corpus, backends, use_knowledge, window)).collect()
}

/// Region embeddings and all four description embeddings (the model picks
/// its attribute subset).
pub fn featurize_sticker<T: Scalar>(sticker: &Sticker, backends: &Backends) -> Result<StickerFeatures<T>> {
    let regions = encode_sticker(sticker, backends.visual.as_ref())?;
    let asset = StickerAsset::load(sticker)?;
    let descriptions = describe_attributes(&asset, backends.describer.as_ref(), &backends.prompt_template)?;
    let attributes = Attribute::ALL
        .iter()
        .map(|a| Ok(widen(&encode_text(descriptions.get(*a), backends.text.as_ref())?.embedding.values)))
        .collect::<Result<Vec<Vec<T>>>>()?;
    Ok(StickerFeatures { id: sticker.id.clone(), regions: regions.regions.iter().map(|r| widen(r)).collect(), attributes })
}

pub fn label_vectors<T: Scalar>(taxonomy: &[String], backends: &Backends) -> Result<Vec<Vec<T>>> {
    taxonomy
        .iter()
        .map(|l| Ok(widen(&encode_intention(l, taxonomy, backends.text.as_ref())?.values)))
        .collect()
}

/// Label vectors and features of every sticker in the corpus (all four
/// attributes; see [`select_attributes`]).
pub fn feature_space<T: Scalar>(corpus: &Corpus, backends: &Backends) -> Result<FeatureSpace<T>> {
    let stickers: Vec<&Sticker> = corpus.stickers.values().collect();
    let features = stickers.par_iter().map(|s| featurize_sticker(s, backends)).collect::<Result<Vec<_>>>()?;
    FeatureSpace::new(corpus.taxonomy.clone(), label_vectors(&corpus.taxonomy, backends)?, features, corpus.sticker_labels())
}

/// Restricts every sticker's description embeddings to `attributes`
/// (features are produced for all four in canonical order).
pub fn select_attributes<T: Scalar>(space: &FeatureSpace<T>, attributes: &[Attribute]) -> FeatureSpace<T> {
    let mut out = space.clone();
    for s in &mut out.stickers {
        s.attributes = attributes
            .iter()
            .map(|a| s.attributes[Attribute::ALL.iter().position(|x| x == a).unwrap()].clone())
            .collect();
    }
    out
}

/// Inference-time switches applied over a trained checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "ablation", content = "value")]
pub enum Ablation {
    /// Match against the context vector instead of the intention embedding.
    Intention,
    /// Encode the context without commonsense inferences.
    Knowledge,
    /// Attend with this attribute subset; empty pools regions uniformly.
    Attributes(Vec<Attribute>),
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intention" => Ok(Self::Intention),
            "knowledge" => Ok(Self::Knowledge),
            "attribute" | "attributes" => Ok(Self::Attributes(Vec::new())),
            other => match other.strip_prefix("attributes=") {
                Some(list) => Ok(Self::Attributes(crate::encoders::parse_attribute_list(list)?)),
                None => Err(Error::Config(format!("unknown ablation `{other}`"))),
            },
        }
    }
}

impl Ablation {
    pub fn apply<T: Scalar>(&self, model: &mut Model<T>) {
        match self {
            Ablation::Intention => model.settings.match_mode = MatchMode::Context,
            Ablation::Knowledge => model.settings.use_knowledge = false,
            Ablation::Attributes(a) => model.settings.attributes = a.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub split: Split,
    pub ns: Vec<usize>,
    pub context_window: usize,
    pub ablations: Vec<Ablation>,
    /// Candidate list size for Rₙ@k.
    pub recall_n: Option<usize>,
    pub recall_ks: Vec<usize>,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: Split::Test,
            ns: vec![1, 3, 5],
            context_window: 6,
            ablations: Vec::new(),
            recall_n: None,
            recall_ks: vec![1, 2, 5],
            seed: 0,
        }
    }
}

/// Everything needed to score one split.
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub rankings: Vec<RankedResult>,
}

fn recall_table<T: Scalar>(
    model: &Model<T>,
    index: &StickerIndex,
    space: &FeatureSpace<T>,
    queries: &[QueryFeatures<T>],
    n: usize,
    ks: &[usize],
    seed: u64,
) -> Result<RecallTable> {
    let full = rank_queries(model, index, space, queries, index.len())?;
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    for (q, r) in queries.iter().zip(&full) {
        let gold = q.gold_sticker.clone().ok_or_else(|| Error::Evaluation(format!("query `{}` has no gold sticker", q.id)))?;
        let label = q.gold_label.ok_or_else(|| Error::Evaluation(format!("query `{}` has no gold label", q.id)))?;
        let pool: Vec<&str> = index
            .entries
            .iter()
            .map(|e| e.sticker_id.as_str())
            .filter(|id| *id != gold && !space.shares_label(id, label))
            .collect();
        if pool.len() + 1 < n {
            return Err(Error::Evaluation(format!("query `{}` has only {} candidates for R{n}@k", q.id, pool.len() + 1)));
        }
        let key = content_key(&[&seed.to_string(), &q.id]);
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from_str_radix(&key[..16], 16).expect("hex"));
        let mut chosen: BTreeSet<&str> = sample(&mut rng, pool.len(), n - 1).into_iter().map(|i| pool[i]).collect();
        chosen.insert(&gold);
        let candidates = RankedResult {
            query_id: q.id.clone(),
            ranked: r.ranking.ranked.iter().filter(|(id, _)| chosen.contains(id.as_str())).cloned().collect(),
        };
        for (k, h) in hits.iter_mut() {
            *h += recall_k_of_n(&candidates, &gold, *k)? as usize;
        }
    }
    let total = queries.len() as f64;
    Ok(RecallTable { candidates: n, recall: hits.into_iter().map(|(k, h)| (k, h as f64 / total)).collect() })
}

/// Scores one split of `corpus` with `model` (ablations applied) against a
/// freshly built index.
pub fn evaluate<T: Scalar>(
    corpus: &Corpus,
    space: &FeatureSpace<T>,
    backends: &Backends,
    model: &Model<T>,
    options: &EvalOptions,
    echo: serde_json::Value,
) -> Result<EvalOutcome> {
    let mut model = model.clone();
    for a in &options.ablations {
        a.apply(&mut model);
    }
    let space = select_attributes(space, &model.settings.attributes);
    let queries = featurize_split::<T>(corpus, options.split, backends, model.settings.use_knowledge, options.context_window)?;
    if queries.is_empty() {
        return Err(Error::Evaluation(format!("split {} has no conversations", options.split)));
    }
    let index = build_index(&model, &space)?;
    let ranked = rank_queries(&model, &index, &space, &queries, index.len())?;
    let recall = match options.recall_n {
        Some(n) => Some(recall_table(&model, &index, &space, &queries, n, &options.recall_ks, options.seed)?),
        None => None,
    };
    let labels = corpus.sticker_labels();
    let inputs: Vec<QueryInput> = corpus
        .split(options.split)
        .zip(ranked)
        .map(|(c, r)| QueryInput {
            judgment: RelevanceJudgment::for_conversation(c, &labels),
            scenario: Some(c.scenario),
            predicted_intention_label: (model.settings.match_mode != MatchMode::Context)
                .then(|| corpus.taxonomy[r.predicted_label].clone()),
            ranking: r.ranking,
        })
        .collect();
    let config = serde_json::json!({
        "model_version": model.version(),
        "settings": model.settings,
        "ablations": options.ablations,
        "split": options.split,
        "context_window": options.context_window,
        "ns": options.ns,
        "recall_n": options.recall_n,
        "extra": echo,
    });
    let rankings = inputs.iter().map(|q| q.ranking.clone()).collect();
    let report = MetricsReport::build(&inputs, &options.ns, recall, config)?;
    Ok(EvalOutcome { report, rankings })
}
