//! Hand-built solution for the planted corpus: a keyword-detector head,
//! label embeddings and mean region vectors interpolated onto one-hot label
//! directions, and zero attention.

use sticker_core::config::{AppConfig, TextBackend};
use sticker_core::dataset::Corpus;
use sticker_core::encoders::StubTextEncoder;
use sticker_core::fusion::AffineMap;
use sticker_core::linalg::Matrix;
use sticker_core::matcher::{FeatureSpace, Model};
use sticker_core::synthetic::{planted_keywords, PLANTED_LABELS};

/// Solves `G x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut g: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| g[i][c].abs().total_cmp(&g[j][c].abs())).unwrap();
        g.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = g[r][c] / g[c][c];
            for k in c..n {
                g[r][k] -= f * g[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| g[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / g[r][r];
    }
    x
}

/// Minimum-norm linear map sending `inputs[i]` to `targets[i]`:
/// `W = T (XᵀX)⁻¹ Xᵀ`.
pub fn interpolating_map(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Matrix<f64> {
    let n = inputs.len();
    let gram: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| inputs[i].iter().zip(&inputs[j]).map(|(a, b)| a * b).sum()).collect()).collect();
    let out = targets[0].len();
    let inp = inputs[0].len();
    let mut w = Matrix::zeros(out, inp);
    for o in 0..out {
        let coef = solve(gram.clone(), targets.iter().map(|t| t[o]).collect());
        for (c, x) in coef.iter().zip(inputs) {
            for k in 0..inp {
                w.data[o * inp + k] += c * x[k];
            }
        }
    }
    w
}

pub fn one_hot(i: usize, n: usize) -> Vec<f64> {
    (0..n).map(|k| if k == i { 1.0 } else { 0.0 }).collect()
}

pub fn hand_built(corpus: &Corpus, cfg: &AppConfig, space: &FeatureSpace<f64>) -> Model<f64> {
    let d = cfg.model.dim;
    let k = PLANTED_LABELS.len();
    let mut hand = Model::<f64>::random(cfg.model.clone(), space.text_dim(), space.visual_dim(), k, 0).unwrap();
    let TextBackend::Stub { seed, max_len, .. } = cfg.backends.text else { panic!("planted config uses the stub text encoder") };
    let enc = StubTextEncoder::new(seed, space.text_dim(), max_len);
    for l in 0..k {
        let mut row = vec![0.0; space.text_dim()];
        for w in planted_keywords(l) {
            for (r, v) in row.iter_mut().zip(enc.token_vector(w)) {
                *r += v;
            }
        }
        hand.head.weight.data[l * space.text_dim()..(l + 1) * space.text_dim()].copy_from_slice(&row);
    }
    hand.head.bias = vec![0.0; k];
    let targets: Vec<Vec<f64>> = (0..k).map(|l| one_hot(l, d)).collect();
    hand.fusion.description = AffineMap::new(interpolating_map(&space.label_vectors, &targets), vec![0.0; d]).unwrap();
    let means: Vec<Vec<f64>> = space.stickers.iter().map(|s| sticker_core::linalg::mean_rows(&s.regions)).collect();
    let sticker_targets: Vec<Vec<f64>> = space
        .stickers
        .iter()
        .map(|s| one_hot(corpus.label_index(space.sticker_labels[&s.id].iter().next().unwrap()).unwrap(), d))
        .collect();
    hand.fusion.visual = AffineMap::new(interpolating_map(&means, &sticker_targets), vec![0.0; d]).unwrap();
    for h in &mut hand.fusion.heads {
        h.query.data.iter_mut().chain(h.key.data.iter_mut()).for_each(|v| *v = 0.0);
    }
    hand
}
