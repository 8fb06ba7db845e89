//! A loaded checkpoint, its sticker index and the sticker set: everything a
//! retrieval request needs. The CLI `retrieve` command and the service both
//! answer through [`Engine::suggest`], so their outputs coincide bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sticker_core::cache::content_key;
use sticker_core::context::QueryContext;
use sticker_core::dataset::{Corpus, Sticker, Utterance};
use sticker_core::fusion::RelationScoreExport;
use sticker_core::matcher::{retrieve, StickerIndex};
use sticker_core::pipeline::{feature_space, featurize_context, select_attributes, Backends};
use sticker_core::{Checkpoint, FeatureSpace, Model};

use crate::error::{AppError, Result};

/// A conversation as exchanged with `retrieve` and dumped by the service:
/// the utterances so far, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveConversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub rank: usize,
    pub sticker_id: String,
    pub score: f64,
    /// Intention predicted for the query (identical across suggestions).
    pub intention_label: String,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestions {
    pub query_id: String,
    pub requested_k: usize,
    /// `requested_k` exceeded the index and the full index was returned.
    pub clamped: bool,
    pub predicted_intention: String,
    pub intention_probability: f64,
    /// Utterances the query was built from after windowing.
    pub context_turns: usize,
    pub suggestions: Vec<Suggestion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_scores: Option<Vec<RelationScoreExport>>,
}

impl Suggestions {
    /// `(sticker_id, score)` in rank order.
    pub fn ranking(&self) -> Vec<(String, f64)> {
        self.suggestions.iter().map(|s| (s.sticker_id.clone(), s.score)).collect()
    }
}

pub fn image_link(sticker_id: &str) -> String {
    format!("/stickers/{sticker_id}/image")
}

/// Content id of an index: its first 16 hex digits of SHA-256 over the
/// serialized form.
pub fn index_id(index: &StickerIndex) -> Result<String> {
    Ok(content_key(&[&serde_json::to_string(index)?])[..16].to_string())
}

pub struct Engine {
    pub checkpoint_id: String,
    pub index_id: String,
    pub taxonomy: Vec<String>,
    pub context_window: usize,
    model: Model,
    index: StickerIndex,
    space: FeatureSpace,
    stickers: BTreeMap<String, Sticker>,
    backends: Backends,
}

impl Engine {
    /// Binds a checkpoint and an index to the corpus sticker set. The
    /// backends must be the ones the checkpoint was trained against and the
    /// index must have been built from the checkpoint.
    pub fn new(
        corpus: &Corpus,
        checkpoint: Checkpoint,
        index: StickerIndex,
        backends: Backends,
        context_window: Option<usize>,
    ) -> Result<Self> {
        backends.check_identity(&checkpoint.backends)?;
        index.check_compatible(&checkpoint.model)?;
        if checkpoint.taxonomy != corpus.taxonomy {
            return Err(AppError::Invalid("checkpoint taxonomy differs from the corpus taxonomy".into()));
        }
        if let Some(e) = index.entries.iter().find(|e| !corpus.stickers.contains_key(&e.sticker_id)) {
            return Err(AppError::NotFound(format!("indexed sticker `{}` is not in the corpus", e.sticker_id)));
        }
        let context_window = context_window.unwrap_or(checkpoint.training.context_window);
        if context_window == 0 {
            return Err(AppError::Invalid("context window must be at least 1".into()));
        }
        let model = checkpoint.model;
        let space = select_attributes(&feature_space::<f64>(corpus, &backends)?, &model.settings.attributes);
        Ok(Self {
            checkpoint_id: checkpoint.model_version,
            index_id: index_id(&index)?,
            taxonomy: checkpoint.taxonomy,
            context_window,
            model,
            index,
            space,
            stickers: corpus.stickers.clone(),
            backends,
        })
    }

    pub fn open(
        corpus: &Corpus,
        checkpoint: &Path,
        index: &Path,
        backends: Backends,
        context_window: Option<usize>,
    ) -> Result<Self> {
        Self::new(corpus, Checkpoint::load(checkpoint)?, StickerIndex::load(index)?, backends, context_window)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn index_len(&self) -> usize {
        self.index.len()
    }

    pub fn indexes(&self, sticker_id: &str) -> bool {
        self.index.contains(sticker_id)
    }

    /// Top-`k` stickers for the trailing `context_window` utterances.
    pub fn suggest(&self, query_id: &str, utterances: &[Utterance], k: usize, relation_scores: bool) -> Result<Suggestions> {
        if utterances.is_empty() {
            return Err(AppError::Precondition("the conversation has no utterances yet".into()));
        }
        if k == 0 {
            return Err(AppError::Invalid("k must be positive".into()));
        }
        let ctx = QueryContext::from_turns(utterances.to_vec()).window(self.context_window);
        let query =
            featurize_context::<f64>(query_id, &ctx, &self.stickers, &self.backends, self.model.settings.use_knowledge)?;
        let ranked = retrieve(&self.model, &self.index, &self.space.label_vectors, &query, k)?;
        let intention = self.taxonomy[ranked.predicted_label].clone();
        let suggestions: Vec<Suggestion> = ranked
            .ranking
            .ranked
            .iter()
            .enumerate()
            .map(|(i, (id, score))| Suggestion {
                rank: i + 1,
                sticker_id: id.clone(),
                score: *score,
                intention_label: intention.clone(),
                image: image_link(id),
            })
            .collect();
        let relation_scores = if relation_scores {
            let exports = suggestions
                .iter()
                .map(|s| {
                    let pos = self.space.sticker_position(&s.sticker_id).expect("indexed stickers are featurized");
                    self.model.relation_export(&self.space.stickers[pos])
                })
                .collect::<sticker_core::Result<Vec<_>>>()?;
            Some(exports)
        } else {
            None
        };
        Ok(Suggestions {
            query_id: query_id.to_string(),
            requested_k: k,
            clamped: k > self.index.len(),
            predicted_intention: intention,
            intention_probability: ranked.class_probs[ranked.predicted_label],
            context_turns: ctx.utterances.len(),
            suggestions,
            relation_scores,
        })
    }

    /// Raster bytes of a sticker and their MIME type.
    pub fn sticker_image(&self, sticker_id: &str) -> Result<(&'static str, Vec<u8>)> {
        let sticker = self
            .stickers
            .get(sticker_id)
            .ok_or_else(|| AppError::NotFound(format!("sticker `{sticker_id}`")))?;
        let bytes = std::fs::read(&sticker.image_ref)?;
        let mime = image::ImageFormat::from_path(&sticker.image_ref)
            .map(|f| f.to_mime_type())
            .unwrap_or("application/octet-stream");
        Ok((mime, bytes))
    }
}
