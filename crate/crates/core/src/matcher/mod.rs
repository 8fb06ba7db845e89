//! Relation-aware selector: cosine matching between the intention embedding
//! and relation-aware sticker vectors, the margin ranking objective, and the
//! joint model the training loop optimizes.

mod index;
mod train;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Scenario;
use crate::encoders::Attribute;
use crate::error::{Error, Result};
use crate::fusion::{description_backward, sticker_backward, sticker_forward, FuseMode, FusionParameters, StickerForward};
use crate::intention::{intention_logit_grad, intention_loss_from_logits, IntentionHead};
use crate::linalg::{argmax, axpy, dot, norm, softmax};
use crate::scalar::Scalar;

pub use index::{
    build_index, rank_queries, retrieve, BackendIdentity, Checkpoint, IndexEntry, RankedQuery, StickerIndex,
    CHECKPOINT_FORMAT, INDEX_FORMAT,
};
pub use train::{train, Adam, EpochLog, TrainingData, TrainingLog, TrainingOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    /// `max(0, margin + s_neg − s_pos)`.
    #[default]
    ClampedStandard,
    /// `max(0, s_neg − (1 − s_pos) + margin)`.
    PaperLiteral,
}

impl std::str::FromStr for LossForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clamped_standard" => Ok(Self::ClampedStandard),
            "paper_literal" => Ok(Self::PaperLiteral),
            other => Err(Error::Config(format!("unknown loss form `{other}`"))),
        }
    }
}

/// What the sticker vectors are matched against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Embedding of the (predicted or teacher-forced) intention label.
    #[default]
    Intention,
    /// The knowledge-fused context vector; the intention head is bypassed.
    Context,
    /// Sum of the context vector and the intention embedding.
    ContextAndIntention,
}

impl std::str::FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intention" => Ok(Self::Intention),
            "context" => Ok(Self::Context),
            "context_and_intention" => Ok(Self::ContextAndIntention),
            other => Err(Error::Config(format!("unknown match mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub margin: f64,
    pub lambda_retrieval: f64,
    pub lambda_intention: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub negatives_per_positive: usize,
    /// Most recent utterances kept in a query context.
    pub context_window: usize,
    pub loss_form: LossForm,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            lambda_retrieval: 1.0,
            lambda_intention: 1.0,
            learning_rate: 1e-4,
            batch_size: 4,
            epochs: 10,
            seed: 0,
            negatives_per_positive: 5,
            context_window: 6,
            loss_form: LossForm::ClampedStandard,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.context_window == 0 {
            return bad("context_window must be at least 1");
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lambda_retrieval.is_finite() && self.lambda_intention.is_finite())
            || self.lambda_retrieval < 0.0
            || self.lambda_intention < 0.0
        {
            return bad("loss weights must be finite and non-negative");
        }
        Ok(())
    }
}

/// Architecture switches; part of the checkpoint and its version hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub dim: usize,
    pub heads: usize,
    pub fuse_mode: FuseMode,
    /// Attributes whose descriptions attend over the regions; empty pools
    /// regions uniformly.
    pub attributes: Vec<Attribute>,
    /// Append commonsense inferences to the context before encoding.
    pub use_knowledge: bool,
    pub match_mode: MatchMode,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            dim: 64,
            heads: 4,
            fuse_mode: FuseMode::PerRegionWeighted,
            attributes: Attribute::ALL.to_vec(),
            use_knowledge: true,
            match_mode: MatchMode::Intention,
        }
    }
}

/// Cosine similarity; a zero vector scores 0 and is reported.
pub fn match_score<T: Scalar>(h_y: &[T], h_r: &[T]) -> Result<T> {
    if h_y.len() != h_r.len() {
        return Err(Error::Shape(format!("cannot match dim {} against dim {}", h_y.len(), h_r.len())));
    }
    Ok(crate::linalg::cosine(h_y, h_r).unwrap_or_else(|| {
        log::warn!("zero vector in match; score defined as 0");
        T::zero()
    }))
}

fn hinge<T: Scalar>(pos: T, neg: T, margin: T, form: LossForm) -> T {
    let v = match form {
        LossForm::ClampedStandard => margin + neg - pos,
        LossForm::PaperLiteral => neg - (T::one() - pos) + margin,
    };
    v.max(T::zero())
}

/// Mean hinge over every (positive, negative) pair.
pub fn retrieval_loss<T: Scalar>(pos_scores: &[T], neg_scores: &[T], margin: T, form: LossForm) -> Result<T> {
    if pos_scores.is_empty() || neg_scores.is_empty() {
        return Err(Error::Arity { expected: 1, actual: 0 });
    }
    let mut total = T::zero();
    for &p in pos_scores {
        for &n in neg_scores {
            total += hinge(p, n, margin, form);
        }
    }
    Ok(total / T::from_usize(pos_scores.len() * neg_scores.len()).unwrap())
}

pub fn joint_loss<T: Scalar>(l_ret: T, l_int: T, lambda_retrieval: T, lambda_intention: T) -> T {
    lambda_retrieval * l_ret + lambda_intention * l_int
}

/// Text-side features of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct QueryFeatures<T> {
    pub id: String,
    /// Encoded context (with knowledge when enabled).
    pub context: Vec<T>,
    /// Only read in training mode.
    pub gold_label: Option<usize>,
    pub gold_sticker: Option<String>,
    pub scenario: Option<Scenario>,
}

/// Visual-side features of one sticker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StickerFeatures<T> {
    pub id: String,
    pub regions: Vec<Vec<T>>,
    /// Encoded descriptions, in the model's attribute order.
    pub attributes: Vec<Vec<T>>,
}

/// Everything shared by all queries: label embeddings and sticker features
/// sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureSpace<T> {
    pub taxonomy: Vec<String>,
    pub label_vectors: Vec<Vec<T>>,
    pub stickers: Vec<StickerFeatures<T>>,
    /// Labels each sticker is gold under.
    pub sticker_labels: BTreeMap<String, BTreeSet<String>>,
}

impl<T: Scalar> FeatureSpace<T> {
    pub fn new(
        taxonomy: Vec<String>,
        label_vectors: Vec<Vec<T>>,
        mut stickers: Vec<StickerFeatures<T>>,
        sticker_labels: BTreeMap<String, BTreeSet<String>>,
    ) -> Result<Self> {
        if taxonomy.len() != label_vectors.len() {
            return Err(Error::Arity { expected: taxonomy.len(), actual: label_vectors.len() });
        }
        stickers.sort_by(|a, b| a.id.cmp(&b.id));
        if stickers.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::Schema("duplicate sticker id in feature space".into()));
        }
        Ok(Self { taxonomy, label_vectors, stickers, sticker_labels })
    }

    pub fn sticker_position(&self, id: &str) -> Option<usize> {
        self.stickers.binary_search_by(|s| s.id.as_str().cmp(id)).ok()
    }

    pub fn text_dim(&self) -> usize {
        self.label_vectors.first().map_or(0, Vec::len)
    }

    pub fn visual_dim(&self) -> usize {
        self.stickers.first().and_then(|s| s.regions.first()).map_or(0, Vec::len)
    }

    pub fn shares_label(&self, sticker: &str, label: usize) -> bool {
        self.sticker_labels.get(sticker).is_some_and(|ls| ls.contains(&self.taxonomy[label]))
    }
}

/// Whether the gold label may be read (teacher forcing).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct QueryForward<T> {
    pub logits: Vec<T>,
    /// Argmax of the head, ties to the lowest index.
    pub predicted: usize,
    /// Label whose embedding fed the match vector (`None` in context mode).
    pub used_label: Option<usize>,
    /// Pre-projection text vector.
    input: Vec<T>,
    pub vector: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub retrieval: T,
    pub intention: T,
    pub joint: T,
}

/// One training query with its positive and sampled negatives (indices into
/// `FeatureSpace::stickers`).
#[derive(Debug, Clone)]
pub struct Sample<'a, T> {
    pub query: &'a QueryFeatures<T>,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// Intention head and fusion stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Model<T> {
    pub settings: ModelSettings,
    pub head: IntentionHead<T>,
    pub fusion: FusionParameters<T>,
}

impl<T: Scalar> Model<T> {
    pub fn random(settings: ModelSettings, text_dim: usize, visual_dim: usize, labels: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = IntentionHead::random(labels, text_dim, &mut rng);
        let fusion = FusionParameters::random(text_dim, visual_dim, settings.dim, settings.heads, &mut rng)?;
        Ok(Self { settings, head, fusion })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            settings: self.settings.clone(),
            head: IntentionHead::zeros(self.head.labels(), self.head.input_dim()),
            fusion: self.fusion.zeros_like(),
        }
    }

    /// Named views of every trainable tensor, in a fixed order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = vec![
            ("intention.weight".to_string(), &mut self.head.weight.data),
            ("intention.bias".to_string(), &mut self.head.bias),
        ];
        out.extend(self.fusion.tensors_mut());
        out
    }

    pub fn is_finite(&self) -> bool {
        let mut m = self.clone();
        m.tensors_mut().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Content hash over settings and parameters.
    pub fn version(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("model serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    pub fn query(&self, q: &QueryFeatures<T>, labels: &[Vec<T>], phase: Phase) -> Result<QueryForward<T>> {
        let logits = self.head.logits(&q.context)?;
        let predicted = argmax(&logits);
        let label = match phase {
            Phase::Train => q.gold_label.ok_or_else(|| Error::Schema(format!("training query `{}` has no gold label", q.id)))?,
            Phase::Eval => predicted,
        };
        let label_vector = |l: usize| labels.get(l).ok_or(Error::Index { index: l, len: labels.len() });
        let (input, used_label) = match self.settings.match_mode {
            MatchMode::Intention => (label_vector(label)?.clone(), Some(label)),
            MatchMode::Context => (q.context.clone(), None),
            MatchMode::ContextAndIntention => {
                let mut x = q.context.clone();
                let lv = label_vector(label)?;
                if lv.len() != x.len() {
                    return Err(Error::Shape("label and context vectors differ in dim".into()));
                }
                axpy(&mut x, T::one(), lv);
                (x, Some(label))
            }
        };
        let vector = self.fusion.description.apply(&input)?;
        Ok(QueryForward { logits, predicted, used_label, input, vector })
    }

    pub fn sticker(&self, s: &StickerFeatures<T>) -> Result<StickerForward<T>> {
        let attrs: &[Vec<T>] = if self.settings.attributes.is_empty() { &[] } else { &s.attributes };
        if attrs.len() != self.settings.attributes.len() {
            return Err(Error::Arity { expected: self.settings.attributes.len(), actual: attrs.len() });
        }
        sticker_forward(&self.fusion, &s.regions, attrs, self.settings.fuse_mode)
    }

    /// Joint loss over a batch; accumulates gradients into `grad` when given.
    pub fn loss(
        &self,
        batch: &[Sample<'_, T>],
        space: &FeatureSpace<T>,
        cfg: &TrainingConfig,
        mut grad: Option<&mut Model<T>>,
    ) -> Result<LossBreakdown<T>> {
        if batch.is_empty() {
            return Err(Error::Arity { expected: 1, actual: 0 });
        }
        let b = T::from_usize(batch.len()).unwrap();
        let margin = T::lit(cfg.margin);
        let (l1, l2) = (T::lit(cfg.lambda_retrieval), T::lit(cfg.lambda_intention));

        let mut stickers: BTreeMap<usize, (StickerForward<T>, Vec<T>)> = BTreeMap::new();
        for s in batch {
            for &i in std::iter::once(&s.positive).chain(&s.negatives) {
                if let std::collections::btree_map::Entry::Vacant(e) = stickers.entry(i) {
                    let st = space.stickers.get(i).ok_or(Error::Index { index: i, len: space.stickers.len() })?;
                    let fwd = self.sticker(st)?;
                    let d = vec![T::zero(); fwd.vector().len()];
                    e.insert((fwd, d));
                }
            }
        }

        let mut ret_total = T::zero();
        let mut int_total = T::zero();
        for s in batch {
            if s.negatives.is_empty() {
                return Err(Error::Arity { expected: 1, actual: 0 });
            }
            let qf = self.query(s.query, &space.label_vectors, Phase::Train)?;
            let gold = s.query.gold_label.expect("checked by query()");
            int_total += intention_loss_from_logits(&qf.logits, gold)?;

            let pos_vec = stickers[&s.positive].0.vector().to_vec();
            let (s_pos, pos_parts) = cosine_parts(&qf.vector, &pos_vec);
            let p = T::from_usize(s.negatives.len()).unwrap();
            let mut d_pos = T::zero();
            let mut d_q = vec![T::zero(); qf.vector.len()];
            for &n in &s.negatives {
                let neg_vec = stickers[&n].0.vector().to_vec();
                let (s_neg, neg_parts) = cosine_parts(&qf.vector, &neg_vec);
                let h = hinge(s_pos, s_neg, margin, cfg.loss_form);
                ret_total += h / p;
                if grad.is_some() && h > T::zero() {
                    let scale = l1 / (b * p);
                    d_pos += match cfg.loss_form {
                        LossForm::ClampedStandard => -scale,
                        LossForm::PaperLiteral => scale,
                    };
                    if let Some((gq, gr)) = cosine_grad(&qf.vector, &neg_vec, s_neg, neg_parts, scale) {
                        axpy(&mut d_q, T::one(), &gq);
                        axpy(&mut stickers.get_mut(&n).unwrap().1, T::one(), &gr);
                    }
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                if d_pos != T::zero() {
                    if let Some((gq, gr)) = cosine_grad(&qf.vector, &pos_vec, s_pos, pos_parts, d_pos) {
                        axpy(&mut d_q, T::one(), &gq);
                        axpy(&mut stickers.get_mut(&s.positive).unwrap().1, T::one(), &gr);
                    }
                }
                if d_q.iter().any(|v| *v != T::zero()) {
                    description_backward(&self.fusion, &qf.input, &d_q, &mut g.fusion);
                }
                if l2 != T::zero() {
                    let dz: Vec<T> = intention_logit_grad(&qf.logits, gold).into_iter().map(|v| v * l2 / b).collect();
                    g.head.weight.add_outer(&dz, &s.query.context, T::one());
                    axpy(&mut g.head.bias, T::one(), &dz);
                }
            }
        }

        if let Some(g) = grad {
            for (i, (fwd, d)) in &stickers {
                if d.iter().any(|v| *v != T::zero()) {
                    let st = &space.stickers[*i];
                    let attrs: &[Vec<T>] = if self.settings.attributes.is_empty() { &[] } else { &st.attributes };
                    sticker_backward(&self.fusion, fwd, &st.regions, attrs, d, &mut g.fusion);
                }
            }
        }

        let retrieval = ret_total / b;
        let intention = int_total / b;
        Ok(LossBreakdown { retrieval, intention, joint: joint_loss(retrieval, intention, l1, l2) })
    }

    /// Match vector for serving (never reads the gold label).
    pub fn predict(&self, q: &QueryFeatures<T>, labels: &[Vec<T>]) -> Result<QueryForward<T>> {
        self.query(q, labels, Phase::Eval)
    }

    pub fn class_probs(&self, q: &QueryFeatures<T>) -> Result<Vec<T>> {
        Ok(softmax(&self.head.logits(&q.context)?))
    }
}

/// Cosine and the two norms, or `None` norms when a vector is zero.
fn cosine_parts<T: Scalar>(a: &[T], b: &[T]) -> (T, Option<(T, T)>) {
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        return (T::zero(), None);
    }
    (dot(a, b) / (na * nb), Some((na, nb)))
}

/// `scale · ∂cos/∂a` and `scale · ∂cos/∂b`.
fn cosine_grad<T: Scalar>(a: &[T], b: &[T], c: T, parts: Option<(T, T)>, scale: T) -> Option<(Vec<T>, Vec<T>)> {
    let (na, nb) = parts?;
    let ab = na * nb;
    let ga = a.iter().zip(b).map(|(&x, &y)| scale * (y / ab - c * x / (na * na))).collect();
    let gb = a.iter().zip(b).map(|(&x, &y)| scale * (x / ab - c * y / (nb * nb))).collect();
    Some((ga, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn match_score_examples() {
        assert!((match_score(&[0.3, 0.4], &[0.3, 0.4]).unwrap() - 1.0f64).abs() < 1e-15);
        assert_eq!(match_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0f64);
        let s: f64 = match_score(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(match_score(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0f64);
        assert!(matches!(match_score(&[1.0f64], &[1.0, 0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn loss_examples() {
        let l = |p: f64, n: f64, f| retrieval_loss(&[p], &[n], 0.2, f).unwrap();
        assert!(l(0.9, 0.1, LossForm::ClampedStandard).abs() < 1e-12);
        assert!((l(0.3, 0.6, LossForm::ClampedStandard) - 0.5).abs() < 1e-12);
        assert!((l(0.9, 0.1, LossForm::PaperLiteral) - 0.2).abs() < 1e-12);
        assert!(matches!(retrieval_loss::<f64>(&[], &[0.1], 0.2, LossForm::ClampedStandard), Err(Error::Arity { .. })));
        assert_eq!(joint_loss(0.5, 0.3, 1.0, 1.0), 0.8);
        assert_eq!(joint_loss(0.5, 0.3, 1.0, 0.0), 0.5);
        assert!((joint_loss(0.7, 4f64.ln(), 0.0, 1.0) - 1.386_294_361_119_890_6).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        for bad in [
            TrainingConfig { margin: 0.0, ..Default::default() },
            TrainingConfig { batch_size: 0, ..Default::default() },
            TrainingConfig { context_window: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn eval_phase_ignores_gold_label() {
        let settings = ModelSettings { dim: 4, heads: 2, ..Default::default() };
        let model = Model::<f64>::random(settings, 3, 5, 3, 1).unwrap();
        let labels = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let mut q = QueryFeatures { id: "q".into(), context: vec![0.2, -0.4, 0.9], gold_label: Some(0), gold_sticker: None, scenario: None };
        let a = model.predict(&q, &labels).unwrap();
        q.gold_label = Some(2);
        let b = model.predict(&q, &labels).unwrap();
        assert_eq!(a.vector, b.vector);
        assert_eq!(a.used_label, Some(a.predicted));
        let t = model.query(&q, &labels, Phase::Train).unwrap();
        assert_eq!(t.used_label, Some(2));
    }
}
