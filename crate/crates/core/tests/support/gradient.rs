//! Random desk-scale instances and a central finite-difference comparison
//! of joint-loss gradients.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sticker_core::fusion::FuseMode;
use sticker_core::matcher::{
    FeatureSpace, LossForm, MatchMode, Model, ModelSettings, Phase, QueryFeatures, Sample, StickerFeatures, TrainingConfig,
};

const TEXT_DIM: usize = 5;
const VISUAL_DIM: usize = 6;
const LABELS: usize = 3;
const REGIONS: usize = 3;
const STICKERS: usize = 4;

fn vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub struct Instance {
    pub model: Model<f64>,
    pub space: FeatureSpace<f64>,
    pub queries: Vec<QueryFeatures<f64>>,
    pub samples: Vec<(usize, usize, Vec<usize>)>,
    pub cfg: TrainingConfig,
}

pub fn instance(seed: u64, mode: FuseMode, match_mode: MatchMode, form: LossForm) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let settings = ModelSettings { dim: 8, heads: 2, fuse_mode: mode, match_mode, ..ModelSettings::default() };
    let mut model = Model::random(settings, TEXT_DIM, VISUAL_DIM, LABELS, seed).unwrap();
    // Larger attention parameters make the softmax maps non-trivial.
    for h in &mut model.fusion.heads {
        h.query.data.iter_mut().chain(h.key.data.iter_mut()).for_each(|v| *v *= 4.0);
    }
    model.head.bias = vec(&mut rng, LABELS);
    let taxonomy: Vec<String> = (0..LABELS).map(|i| format!("label{i}")).collect();
    let stickers = (0..STICKERS)
        .map(|i| StickerFeatures {
            id: format!("s{i}"),
            regions: (0..REGIONS).map(|_| vec(&mut rng, VISUAL_DIM)).collect(),
            attributes: (0..4).map(|_| vec(&mut rng, TEXT_DIM)).collect(),
        })
        .collect();
    let sticker_labels: BTreeMap<String, BTreeSet<String>> =
        (0..STICKERS).map(|i| (format!("s{i}"), BTreeSet::from([taxonomy[i % LABELS].clone()]))).collect();
    let label_vectors = (0..LABELS).map(|_| vec(&mut rng, TEXT_DIM)).collect();
    let space = FeatureSpace::new(taxonomy, label_vectors, stickers, sticker_labels).unwrap();
    let queries: Vec<QueryFeatures<f64>> = (0..2)
        .map(|i| QueryFeatures {
            id: format!("q{i}"),
            context: vec(&mut rng, TEXT_DIM),
            gold_label: Some(i),
            gold_sticker: Some(format!("s{i}")),
            scenario: None,
        })
        .collect();
    let samples = vec![(0, 0, vec![1, 2, 3]), (1, 1, vec![0, 2])];
    let cfg = TrainingConfig { margin: 0.5, loss_form: form, lambda_retrieval: 1.0, lambda_intention: 0.7, ..Default::default() };
    Instance { model, space, queries, samples, cfg }
}

impl Instance {
    pub fn batch(&self) -> Vec<Sample<'_, f64>> {
        self.samples
            .iter()
            .map(|(q, p, n)| Sample { query: &self.queries[*q], positive: *p, negatives: n.clone() })
            .collect()
    }

    pub fn loss(&self, model: &Model<f64>) -> f64 {
        model.loss(&self.batch(), &self.space, &self.cfg, None).unwrap().joint
    }

    /// Distance of the instance from the loss's non-differentiable points:
    /// hinge kinks and ties in the per-region max over (attribute, head).
    pub fn kink_gap(&self) -> f64 {
        let m = &self.model;
        let mut gap = f64::INFINITY;
        for (qi, p, negs) in &self.samples {
            let q = m.query(&self.queries[*qi], &self.space.label_vectors, Phase::Train).unwrap().vector;
            let cos = |s: usize| {
                let v = m.sticker(&self.space.stickers[s]).unwrap();
                sticker_core::matcher::match_score(&q, v.vector()).unwrap()
            };
            let sp = cos(*p);
            for n in negs {
                let sn = cos(*n);
                let h = match self.cfg.loss_form {
                    LossForm::ClampedStandard => self.cfg.margin + sn - sp,
                    LossForm::PaperLiteral => sn - (1.0 - sp) + self.cfg.margin,
                };
                gap = gap.min(h.abs());
            }
        }
        for s in &self.space.stickers {
            let f = m.sticker(s).unwrap();
            for i in 0..REGIONS {
                let mut w: Vec<f64> = f.attention.iter().flat_map(|a| a.iter().map(|h| h[i])).collect();
                w.sort_by(|a, b| b.total_cmp(a));
                gap = gap.min(w[0] - w[1]);
            }
            if let Some(score) = &f.score {
                let mut r = score.per_region.clone();
                r.sort_by(|a, b| b.total_cmp(a));
                gap = gap.min(r[0] - r[1]);
            }
        }
        gap
    }
}

/// Worst per-tensor relative error over `instances` instances away from
/// kinks, or the first tensor exceeding `tolerance`.
pub fn check(mode: FuseMode, match_mode: MatchMode, form: LossForm, instances: usize, tolerance: f64) -> Result<f64, String> {
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    let mut seed = 0;
    let mut done = 0;
    while done < instances {
        seed += 1;
        let inst = instance(seed, mode, match_mode, form);
        if inst.kink_gap() < 1e-3 {
            continue;
        }
        done += 1;
        let mut grad = inst.model.zeros_like();
        inst.model.loss(&inst.batch(), &inst.space, &inst.cfg, Some(&mut grad)).unwrap();
        let analytic: Vec<(String, Vec<f64>)> = grad.tensors_mut().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let mut probe = inst.model.clone();
        for (k, (name, a)) in analytic.iter().enumerate() {
            let mut numeric = vec![0.0; a.len()];
            for i in 0..a.len() {
                let orig = probe.tensors_mut()[k].1[i];
                probe.tensors_mut()[k].1[i] = orig + step;
                let up = inst.loss(&probe);
                probe.tensors_mut()[k].1[i] = orig - step;
                let down = inst.loss(&probe);
                probe.tensors_mut()[k].1[i] = orig;
                numeric[i] = (up - down) / (2.0 * step);
            }
            let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
            // Tensors whose true gradient vanishes (attention maps under the
            // literal fuse mode) are compared against a 1e-5 floor.
            let rel = diff / scale.max(1e-5);
            if !(rel < tolerance) {
                return Err(format!("seed {seed} {name}: relative error {rel:e} (diff {diff:e}, scale {scale:e})"));
            }
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
