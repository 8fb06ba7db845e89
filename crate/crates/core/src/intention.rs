//! Knowledge-enhanced intention predictor: a softmax classifier over the
//! context representation, and the label embedding used for matching.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{encode_text, Embedding, TextEncoder};
use crate::error::{Error, Result};
use crate::linalg::{argmax, log_sum_exp, softmax, Matrix};
use crate::scalar::Scalar;

/// `class_probs = softmax(W h + b)` over `K` taxonomy labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct IntentionHead<T> {
    /// `K × text_dim`.
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> IntentionHead<T> {
    pub fn zeros(labels: usize, text_dim: usize) -> Self {
        Self { weight: Matrix::zeros(labels, text_dim), bias: vec![T::zero(); labels] }
    }

    /// Uniform in `±1/√text_dim`, zero bias.
    pub fn random<R: Rng>(labels: usize, text_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (text_dim as f64).sqrt();
        Self {
            weight: Matrix::from_fn(labels, text_dim, |_, _| T::lit(rng.random_range(-bound..bound))),
            bias: vec![T::zero(); labels],
        }
    }

    pub fn labels(&self) -> usize {
        self.bias.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn logits(&self, h_t: &[T]) -> Result<Vec<T>> {
        if h_t.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "context representation has dim {}, intention head expects {}",
                h_t.len(),
                self.input_dim()
            )));
        }
        let mut z = self.weight.matvec(h_t);
        z.iter_mut().zip(&self.bias).for_each(|(z, &b)| *z += b);
        Ok(z)
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentionPrediction<T> {
    pub class_probs: Vec<T>,
    /// Argmax of `class_probs`, ties to the lowest index.
    pub label: usize,
}

pub fn predict_intention<T: Scalar>(h_t: &[T], head: &IntentionHead<T>) -> Result<IntentionPrediction<T>> {
    let class_probs = softmax(&head.logits(h_t)?);
    let label = argmax(&class_probs);
    Ok(IntentionPrediction { class_probs, label })
}

/// Cross-entropy `−ln class_probs[gold]`.
pub fn intention_loss<T: Scalar>(class_probs: &[T], gold: usize) -> Result<T> {
    let p = *class_probs.get(gold).ok_or(Error::Index { index: gold, len: class_probs.len() })?;
    Ok(-p.ln())
}

/// Mean cross-entropy over a batch.
pub fn batch_intention_loss<T: Scalar>(batch: &[(Vec<T>, usize)]) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::Arity { expected: 1, actual: 0 });
    }
    let mut total = T::zero();
    for (p, g) in batch {
        total += intention_loss(p, *g)?;
    }
    Ok(total / T::from_usize(batch.len()).unwrap())
}

/// Cross-entropy computed from logits via log-sum-exp, stable for any gap.
pub fn intention_loss_from_logits<T: Scalar>(logits: &[T], gold: usize) -> Result<T> {
    let z = *logits.get(gold).ok_or(Error::Index { index: gold, len: logits.len() })?;
    Ok(log_sum_exp(logits) - z)
}

/// `∂ loss / ∂ logits = softmax(logits) − onehot(gold)`.
pub fn intention_logit_grad<T: Scalar>(logits: &[T], gold: usize) -> Vec<T> {
    let mut g = softmax(logits);
    g[gold] -= T::one();
    g
}

/// Embeds a taxonomy label's surface string.
pub fn encode_intention(label: &str, taxonomy: &[String], encoder: &dyn TextEncoder) -> Result<Embedding> {
    if !taxonomy.iter().any(|l| l == label) {
        return Err(Error::Taxonomy(label.to_string()));
    }
    Ok(encode_text(label, encoder)?.embedding)
}
