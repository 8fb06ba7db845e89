use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::index::{build_index, rank_queries};
use super::{FeatureSpace, LossBreakdown, Model, QueryFeatures, Sample, TrainingConfig};
use crate::error::{Error, Result};
use crate::metrics::{average_precision, precision_at_n, RelevanceJudgment};
use crate::scalar::Scalar;

/// Adam with bias correction, β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate: T::lit(learning_rate),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut Model<T>, grads: &mut Model<T>) {
        let mut ps = params.tensors_mut();
        let gs = grads.tensors_mut();
        if self.m.is_empty() {
            self.m = gs.iter().map(|(_, g)| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = T::one() - self.beta1.powi(self.step);
        let c2 = T::one() - self.beta2.powi(self.step);
        for (k, ((_, p), (_, g))) in ps.iter_mut().zip(gs).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub margin: f64,
    pub retrieval_loss: f64,
    pub intention_loss: f64,
    pub joint_loss: f64,
    pub train_p1: f64,
    pub valid_map: Option<f64>,
    pub valid_p1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub config: TrainingConfig,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
}

pub struct TrainingData<'a, T> {
    pub space: &'a FeatureSpace<T>,
    pub train: &'a [QueryFeatures<T>],
    pub valid: &'a [QueryFeatures<T>],
}

pub struct TrainingOutcome<T> {
    /// Parameters of the epoch with the best validation mAP (ties to the
    /// earlier epoch; the last epoch when there is no validation split).
    pub best: Model<T>,
    pub last: Model<T>,
    pub log: TrainingLog,
}

/// Negatives exclude the gold sticker and stickers sharing its label; when
/// that leaves nothing, any non-gold sticker qualifies.
fn negative_pool<T: Scalar>(space: &FeatureSpace<T>, positive: usize, label: usize) -> Vec<usize> {
    let strict: Vec<usize> = (0..space.stickers.len())
        .filter(|&i| i != positive && !space.shares_label(&space.stickers[i].id, label))
        .collect();
    if !strict.is_empty() {
        return strict;
    }
    (0..space.stickers.len()).filter(|&i| i != positive).collect()
}

/// Ranks every query against the full sticker set; returns (mAP, P@1).
pub(crate) fn quick_eval<T: Scalar>(model: &Model<T>, space: &FeatureSpace<T>, queries: &[QueryFeatures<T>]) -> Result<(f64, f64)> {
    if queries.is_empty() {
        return Err(Error::Evaluation("no queries".into()));
    }
    let index = build_index(model, space)?;
    let ranked = rank_queries(model, &index, space, queries, index.len())?;
    let (mut ap, mut p1) = (0.0, 0.0);
    for (q, r) in queries.iter().zip(&ranked) {
        let label = q.gold_label.ok_or_else(|| Error::Evaluation(format!("query `{}` has no gold label", q.id)))?;
        let gold = q.gold_sticker.clone().ok_or_else(|| Error::Evaluation(format!("query `{}` has no gold sticker", q.id)))?;
        let relevant = space.stickers.iter().filter(|s| space.shares_label(&s.id, label)).map(|s| s.id.clone());
        let j = RelevanceJudgment::new(&q.id, gold, &space.taxonomy[label], relevant);
        ap += average_precision(&r.ranking, &j);
        p1 += precision_at_n(&r.ranking, &j, 1)?.hit as u8 as f64;
    }
    let n = queries.len() as f64;
    Ok((ap / n, p1 / n))
}

pub fn train<T: Scalar>(mut model: Model<T>, data: &TrainingData<'_, T>, cfg: &TrainingConfig) -> Result<TrainingOutcome<T>> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Domain("no training conversations".into()));
    }
    if data.space.stickers.len() < 2 {
        return Err(Error::Domain("training needs at least two stickers".into()));
    }
    log::info!(
        "training: margin {} λ=({}, {}) lr {} batch {} epochs {} negatives {} loss {:?}",
        cfg.margin,
        cfg.lambda_retrieval,
        cfg.lambda_intention,
        cfg.learning_rate,
        cfg.batch_size,
        cfg.epochs,
        cfg.negatives_per_positive,
        cfg.loss_form
    );
    let mut positives = Vec::with_capacity(data.train.len());
    for q in data.train {
        let gold = q.gold_sticker.as_deref().ok_or_else(|| Error::Schema(format!("training query `{}` has no gold sticker", q.id)))?;
        let pos = data.space.sticker_position(gold).ok_or_else(|| Error::NotFound(format!("sticker `{gold}`")))?;
        let label = q.gold_label.ok_or_else(|| Error::Schema(format!("training query `{}` has no gold label", q.id)))?;
        positives.push((pos, negative_pool(data.space, pos, label)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a1e);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model<T>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown { retrieval: 0.0, intention: 0.0, joint: 0.0 };
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Sample<'_, T>> = chunk
                .iter()
                .map(|&qi| {
                    let (pos, pool) = &positives[qi];
                    let take = cfg.negatives_per_positive.min(pool.len());
                    let negatives = sample(&mut rng, pool.len(), take).into_iter().map(|k| pool[k]).collect();
                    Sample { query: &data.train[qi], positive: *pos, negatives }
                })
                .collect();
            let mut grad = model.zeros_like();
            let loss = model.loss(&batch, data.space, cfg, Some(&mut grad))?;
            if !loss.joint.is_finite() || !grad.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: bi,
                    conversation_ids: batch.iter().map(|s| s.query.id.clone()).collect(),
                });
            }
            adam.step(&mut model, &mut grad);
            sums.retrieval += loss.retrieval.as_f64();
            sums.intention += loss.intention.as_f64();
            sums.joint += loss.joint.as_f64();
            batches += 1;
        }
        if !model.is_finite() {
            return Err(Error::NonFinite { epoch, batch: batches, conversation_ids: Vec::new() });
        }
        let (_, train_p1) = quick_eval(&model, data.space, data.train)?;
        let valid = if data.valid.is_empty() { None } else { Some(quick_eval(&model, data.space, data.valid)?) };
        let n = batches as f64;
        let entry = EpochLog {
            epoch,
            margin: cfg.margin,
            retrieval_loss: sums.retrieval / n,
            intention_loss: sums.intention / n,
            joint_loss: sums.joint / n,
            train_p1,
            valid_map: valid.map(|v| v.0),
            valid_p1: valid.map(|v| v.1),
        };
        log::info!(
            "epoch {epoch}: L={:.5} (ret {:.5}, int {:.5}) train P@1 {:.3} valid mAP {:?}",
            entry.joint_loss,
            entry.retrieval_loss,
            entry.intention_loss,
            entry.train_p1,
            entry.valid_map
        );
        let score = entry.valid_map.unwrap_or(f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some((s, _, _)) => score > *s || (entry.valid_map.is_none()),
        };
        if better {
            best = Some((score, epoch, model.clone()));
        }
        epochs.push(entry);
    }

    let (best_model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model.clone(), 0),
    };
    Ok(TrainingOutcome {
        best: best_model,
        last: model,
        log: TrainingLog { config: cfg.clone(), epochs, best_epoch },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let settings = super::super::ModelSettings { dim: 4, heads: 2, ..Default::default() };
        let mut model = Model::<f64>::random(settings, 3, 3, 2, 0).unwrap();
        let before = model.clone();
        let mut grad = model.zeros_like();
        let mut adam = Adam::new(0.1);
        adam.step(&mut model, &mut grad);
        assert_eq!(model, before);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let settings = super::super::ModelSettings { dim: 4, heads: 2, ..Default::default() };
        let mut model = Model::<f64>::random(settings, 3, 3, 2, 0).unwrap();
        let before = model.head.bias.clone();
        let mut grad = model.zeros_like();
        grad.head.bias = vec![2.0, -0.5];
        let mut adam = Adam::new(0.01);
        adam.step(&mut model, &mut grad);
        assert!((before[0] - model.head.bias[0] - 0.01).abs() < 1e-9);
        assert!((model.head.bias[1] - before[1] - 0.01).abs() < 1e-9);
    }
}
