use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{match_score, FeatureSpace, Model, QueryFeatures, TrainingConfig};
use crate::encoders::Attribute;
use crate::error::{Error, Result};
use crate::fusion::{FuseMode, RelationScoreExport};
use crate::metrics::RankedResult;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: u32 = 1;
pub const INDEX_FORMAT: u32 = 1;

/// Identities of the frozen backends a checkpoint was trained against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct BackendIdentity {
    pub text_encoder: String,
    pub visual_encoder: String,
    pub describer: String,
    pub generator: String,
    pub prompt_template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Checkpoint<T> {
    pub format: u32,
    pub model_version: String,
    pub model: Model<T>,
    pub training: TrainingConfig,
    pub taxonomy: Vec<String>,
    pub backends: BackendIdentity,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(model: Model<T>, training: TrainingConfig, taxonomy: Vec<String>, backends: BackendIdentity) -> Self {
        Self { format: CHECKPOINT_FORMAT, model_version: model.version(), model, training, taxonomy, backends }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::load(path, e))
    }

    /// Rejects unknown formats and parameters that no longer hash to the
    /// recorded version.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::load(path, e))?;
        let ck: Self = serde_json::from_slice(&bytes)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Version { expected: CHECKPOINT_FORMAT.to_string(), found: ck.format.to_string() });
        }
        let actual = ck.model.version();
        if actual != ck.model_version {
            return Err(Error::Version { expected: ck.model_version, found: actual });
        }
        Ok(ck)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub sticker_id: String,
    pub vector: Vec<f64>,
}

/// Precomputed relation-aware sticker vectors, sorted by sticker id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StickerIndex {
    pub format: u32,
    pub model_version: String,
    pub fuse_mode: FuseMode,
    pub dim: usize,
    pub entries: Vec<IndexEntry>,
}

impl StickerIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, sticker_id: &str) -> bool {
        self.entries.binary_search_by(|e| e.sticker_id.as_str().cmp(sticker_id)).is_ok()
    }

    pub fn check_compatible<T: Scalar>(&self, model: &Model<T>) -> Result<()> {
        let version = model.version();
        if self.model_version != version {
            return Err(Error::Version { expected: version, found: self.model_version.clone() });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::load(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::load(path, e))?;
        let index: Self = serde_json::from_slice(&bytes)?;
        if index.format != INDEX_FORMAT {
            return Err(Error::Version { expected: INDEX_FORMAT.to_string(), found: index.format.to_string() });
        }
        if index.entries.iter().any(|e| e.vector.len() != index.dim) {
            return Err(Error::Shape("index entries differ in dimension".into()));
        }
        Ok(index)
    }

    /// Ranks every entry against `query`, descending score, ties by id;
    /// `k` is clamped to the index size.
    pub fn search(&self, query_id: &str, query: &[f64], k: usize) -> Result<RankedResult> {
        if self.is_empty() {
            return Err(Error::Domain("the sticker index is empty".into()));
        }
        if k == 0 {
            return Err(Error::Domain("k must be positive".into()));
        }
        if k > self.len() {
            log::warn!("k = {k} exceeds the index size {}; returning the full index", self.len());
        }
        let scores = self
            .entries
            .iter()
            .map(|e| Ok((e.sticker_id.clone(), match_score(query, &e.vector)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut ranked = RankedResult::from_scores(query_id, scores);
        ranked.ranked.truncate(k.min(self.len()));
        Ok(ranked)
    }
}

/// One relation-aware vector per sticker; parallel per sticker, ordered by id.
pub fn build_index<T: Scalar>(model: &Model<T>, space: &FeatureSpace<T>) -> Result<StickerIndex> {
    let entries = space
        .stickers
        .par_iter()
        .map(|s| {
            let fwd = model.sticker(s)?;
            Ok(IndexEntry { sticker_id: s.id.clone(), vector: fwd.vector().iter().map(|v| v.as_f64()).collect() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StickerIndex {
        format: INDEX_FORMAT,
        model_version: model.version(),
        fuse_mode: model.settings.fuse_mode,
        dim: model.settings.dim,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedQuery {
    pub ranking: RankedResult,
    /// Head prediction (reported even in context-matching mode).
    pub predicted_label: usize,
    pub class_probs: Vec<f64>,
}

pub fn retrieve<T: Scalar>(
    model: &Model<T>,
    index: &StickerIndex,
    label_vectors: &[Vec<T>],
    query: &QueryFeatures<T>,
    k: usize,
) -> Result<RankedQuery> {
    index.check_compatible(model)?;
    let fwd = model.predict(query, label_vectors)?;
    let q: Vec<f64> = fwd.vector.iter().map(|v| v.as_f64()).collect();
    let ranking = index.search(&query.id, &q, k)?;
    let class_probs = crate::linalg::softmax(&fwd.logits).iter().map(|v| v.as_f64()).collect();
    Ok(RankedQuery { ranking, predicted_label: fwd.predicted, class_probs })
}

/// Retrieval for many queries, parallel per query, results in input order.
pub fn rank_queries<T: Scalar>(
    model: &Model<T>,
    index: &StickerIndex,
    space: &FeatureSpace<T>,
    queries: &[QueryFeatures<T>],
    k: usize,
) -> Result<Vec<RankedQuery>> {
    queries.par_iter().map(|q| retrieve(model, index, &space.label_vectors, q, k)).collect()
}

impl<T: Scalar> Model<T> {
    /// Relation-score record for one sticker.
    pub fn relation_export(&self, sticker: &super::StickerFeatures<T>) -> Result<RelationScoreExport> {
        let fwd = self.sticker(sticker)?;
        let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
        let mut per_attribute: BTreeMap<Attribute, Vec<f64>> = BTreeMap::new();
        for (a, heads) in self.settings.attributes.iter().zip(&fwd.attention) {
            let n = heads.first().map_or(0, Vec::len);
            let maxed: Vec<f64> = (0..n).map(|i| heads.iter().map(|h| h[i].as_f64()).fold(f64::NEG_INFINITY, f64::max)).collect();
            per_attribute.insert(*a, maxed);
        }
        let (raw, pooled) = match &fwd.score {
            Some(s) => (f(&s.per_region), s.pooled.as_f64()),
            None => (f(&fwd.fused.weights), 0.0),
        };
        Ok(RelationScoreExport {
            sticker_id: sticker.id.clone(),
            per_region: f(&fwd.fused.weights),
            raw_per_region: raw,
            pooled,
            per_attribute,
        })
    }
}
