//! Attribute-aware sticker representation.
//!
//! Both modalities are projected to a shared dimension `d`; every attribute
//! description attends over the sticker's regions with `h` heads of size
//! `d / h`; the attention weights are max-pooled (over heads, then
//! attributes) into a per-region relation score; the score pools the
//! projected regions into the relation-aware sticker vector.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::Attribute;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, mean_rows, scaled, softmax, Matrix};
use crate::scalar::Scalar;

/// `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AffineMap<T> {
    /// `out × in`.
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> AffineMap<T> {
    pub fn new(weight: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weight.rows {
            return Err(Error::Shape(format!("bias length {} for {} outputs", bias.len(), weight.rows)));
        }
        Ok(Self { weight, bias })
    }

    pub fn identity(n: usize) -> Self {
        Self { weight: Matrix::identity(n), bias: vec![T::zero(); n] }
    }

    pub fn zeros(out: usize, input: usize) -> Self {
        Self { weight: Matrix::zeros(out, input), bias: vec![T::zero(); out] }
    }

    /// Zero-mean uniform weights and bias with bound `1/√input`.
    pub fn random<R: Rng>(out: usize, input: usize, rng: &mut R) -> Self {
        let b = 1.0 / (input as f64).sqrt();
        Self {
            weight: Matrix::from_fn(out, input, |_, _| T::lit(rng.random_range(-b..b))),
            bias: (0..out).map(|_| T::lit(rng.random_range(-b..b))).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!("input dim {} for a map expecting {}", x.len(), self.input_dim())));
        }
        let mut y = self.weight.matvec(x);
        y.iter_mut().zip(&self.bias).for_each(|(y, &b)| *y += b);
        Ok(y)
    }

    /// Accumulates `∂L/∂W += g xᵀ`, `∂L/∂b += g` into `grad` and returns `∂L/∂x`.
    fn backward(&self, x: &[T], g: &[T], grad: &mut AffineMap<T>) -> Vec<T> {
        grad.weight.add_outer(g, x, T::one());
        axpy(&mut grad.bias, T::one(), g);
        self.weight.t_matvec(g)
    }
}

/// Applies `map` to one vector or to every region of a sticker.
pub fn project<T: Scalar>(inputs: &[Vec<T>], map: &AffineMap<T>) -> Result<Vec<Vec<T>>> {
    inputs.iter().map(|x| map.apply(x)).collect()
}

/// Per-head query/key/value maps, each `d × d/h` (applied as `x W`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct HeadProjections<T> {
    pub query: Matrix<T>,
    pub key: Matrix<T>,
    pub value: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FusionParameters<T> {
    pub dim: usize,
    pub head_count: usize,
    /// Visual regions → `d`.
    pub visual: AffineMap<T>,
    /// Text-space vectors (descriptions, intention) → `d`.
    pub description: AffineMap<T>,
    pub heads: Vec<HeadProjections<T>>,
}

pub fn check_heads(dim: usize, head_count: usize) -> Result<usize> {
    if head_count == 0 || dim == 0 || dim % head_count != 0 {
        return Err(Error::Config(format!("dimension {dim} is not divisible into {head_count} heads")));
    }
    Ok(dim / head_count)
}

impl<T: Scalar> FusionParameters<T> {
    pub fn random<R: Rng>(text_dim: usize, visual_dim: usize, dim: usize, head_count: usize, rng: &mut R) -> Result<Self> {
        let dh = check_heads(dim, head_count)?;
        let b = 1.0 / (dim as f64).sqrt();
        let m = |rng: &mut R| Matrix::from_fn(dim, dh, |_, _| T::lit(rng.random_range(-b..b)));
        let visual = AffineMap::random(dim, visual_dim, rng);
        let description = AffineMap::random(dim, text_dim, rng);
        let heads = (0..head_count)
            .map(|_| HeadProjections { query: m(rng), key: m(rng), value: m(rng) })
            .collect();
        Ok(Self { dim, head_count, visual, description, heads })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix<T>| Matrix::zeros(m.rows, m.cols);
        Self {
            dim: self.dim,
            head_count: self.head_count,
            visual: AffineMap::zeros(self.visual.output_dim(), self.visual.input_dim()),
            description: AffineMap::zeros(self.description.output_dim(), self.description.input_dim()),
            heads: self
                .heads
                .iter()
                .map(|h| HeadProjections { query: z(&h.query), key: z(&h.key), value: z(&h.value) })
                .collect(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.head_count
    }

    pub fn validate(&self) -> Result<()> {
        let dh = check_heads(self.dim, self.head_count)?;
        if self.heads.len() != self.head_count
            || self.visual.output_dim() != self.dim
            || self.description.output_dim() != self.dim
            || self.heads.iter().any(|h| {
                [&h.query, &h.key, &h.value].iter().any(|m| m.rows != self.dim || m.cols != dh)
            })
        {
            return Err(Error::Shape("fusion parameter shapes are inconsistent".into()));
        }
        Ok(())
    }

    /// Named views of every tensor, in a fixed order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = vec![
            ("fusion.visual.weight".to_string(), &mut self.visual.weight.data),
            ("fusion.visual.bias".to_string(), &mut self.visual.bias),
            ("fusion.description.weight".to_string(), &mut self.description.weight.data),
            ("fusion.description.bias".to_string(), &mut self.description.bias),
        ];
        for (i, h) in self.heads.iter_mut().enumerate() {
            out.push((format!("fusion.head{i}.query"), &mut h.query.data));
            out.push((format!("fusion.head{i}.key"), &mut h.key.data));
            out.push((format!("fusion.head{i}.value"), &mut h.value.data));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput<T> {
    /// `[head][region]`, each row sums to 1.
    pub weights: Vec<Vec<T>>,
    /// `[head]` attended value vectors of size `d/h`.
    pub outputs: Vec<Vec<T>>,
}

/// Scaled dot-product attention of one projected description over the
/// projected regions, for every head.
pub fn cross_attention<T: Scalar>(query: &[T], regions: &[Vec<T>], params: &FusionParameters<T>) -> Result<AttentionOutput<T>> {
    let dh = check_heads(params.dim, params.head_count)?;
    if query.len() != params.dim || regions.iter().any(|r| r.len() != params.dim) {
        return Err(Error::Shape(format!("attention inputs must have dimension {}", params.dim)));
    }
    if regions.is_empty() {
        return Err(Error::Shape("attention over zero regions".into()));
    }
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut weights = Vec::with_capacity(params.head_count);
    let mut outputs = Vec::with_capacity(params.head_count);
    for h in &params.heads {
        let q = h.query.t_matvec(query);
        let scores: Vec<T> = regions.iter().map(|r| dot(&q, &h.key.t_matvec(r)) * scale).collect();
        let a = softmax(&scores);
        let mut o = vec![T::zero(); dh];
        for (w, r) in a.iter().zip(regions) {
            axpy(&mut o, *w, &h.value.t_matvec(r));
        }
        weights.push(a);
        outputs.push(o);
    }
    Ok(AttentionOutput { weights, outputs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RelationScore<T> {
    /// Max attention weight each region receives over heads and attributes.
    pub per_region: Vec<T>,
    /// Max of `per_region`.
    pub pooled: T,
}

/// Element-wise max over heads, then over attributes. Every attribute in
/// `required` must have a map; all maps must cover the same regions.
pub fn relation_score<T: Scalar>(
    maps: &BTreeMap<Attribute, Vec<Vec<T>>>,
    required: &[Attribute],
) -> Result<RelationScore<T>> {
    if required.is_empty() || required.iter().any(|a| !maps.contains_key(a)) {
        return Err(Error::Arity {
            expected: required.len().max(1),
            actual: required.iter().filter(|a| maps.contains_key(a)).count(),
        });
    }
    let n = maps[&required[0]].first().map_or(0, Vec::len);
    let mut per_region = vec![T::neg_infinity(); n];
    for a in required {
        let attr_max = elementwise_max(&maps[a], n)?;
        for (p, v) in per_region.iter_mut().zip(attr_max) {
            *p = p.max(v);
        }
    }
    let pooled = per_region.iter().copied().fold(T::neg_infinity(), T::max);
    Ok(RelationScore { per_region, pooled })
}

fn elementwise_max<T: Scalar>(rows: &[Vec<T>], n: usize) -> Result<Vec<T>> {
    let mut out = vec![T::neg_infinity(); n];
    for r in rows {
        if r.len() != n {
            return Err(Error::Shape("attention maps cover different region sets".into()));
        }
        for (o, &v) in out.iter_mut().zip(r) {
            *o = o.max(v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FuseMode {
    /// Scalar relation score times the mean region vector.
    LiteralScalar,
    /// Normalized per-region scores as pooling weights.
    #[default]
    PerRegionWeighted,
}

impl std::str::FromStr for FuseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal_scalar" => Ok(Self::LiteralScalar),
            "per_region_weighted" => Ok(Self::PerRegionWeighted),
            other => Err(Error::Config(format!("unknown fuse mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused<T> {
    pub vector: Vec<T>,
    /// Pooling weights actually used (weighted mode) or the uniform weights
    /// the mean is taken with (literal mode).
    pub weights: Vec<T>,
    /// Weights summed to zero and the uniform fallback was used.
    pub fell_back: bool,
}

/// Relation-aware sticker vector from a relation score and projected regions.
pub fn fuse<T: Scalar>(score: &RelationScore<T>, regions: &[Vec<T>], mode: FuseMode) -> Result<Fused<T>> {
    if score.per_region.len() != regions.len() || regions.is_empty() {
        return Err(Error::Shape(format!(
            "relation score covers {} regions, sticker has {}",
            score.per_region.len(),
            regions.len()
        )));
    }
    let n = T::from_usize(regions.len()).unwrap();
    let uniform = vec![T::one() / n; regions.len()];
    match mode {
        FuseMode::LiteralScalar => Ok(Fused {
            vector: scaled(&mean_rows(regions), score.pooled),
            weights: uniform,
            fell_back: false,
        }),
        FuseMode::PerRegionWeighted => {
            let total: T = score.per_region.iter().copied().sum();
            let (weights, fell_back) = if total > T::zero() && total.is_finite() {
                (score.per_region.iter().map(|&p| p / total).collect(), false)
            } else {
                log::warn!("relation score sums to zero; pooling regions uniformly");
                (uniform, true)
            };
            let mut vector = vec![T::zero(); regions[0].len()];
            for (w, r) in weights.iter().zip(regions) {
                axpy(&mut vector, *w, r);
            }
            Ok(Fused { vector, weights, fell_back })
        }
    }
}

/// Everything the backward pass needs from one sticker's forward pass.
#[derive(Debug, Clone)]
pub struct StickerForward<T> {
    pub projected_regions: Vec<Vec<T>>,
    pub projected_attributes: Vec<Vec<T>>,
    /// `[attribute][head]` query vectors.
    queries: Vec<Vec<Vec<T>>>,
    /// `[head][region]` key vectors.
    keys: Vec<Vec<Vec<T>>>,
    /// `[attribute][head][region]` attention weights.
    pub attention: Vec<Vec<Vec<T>>>,
    /// `(attribute, head)` that attains each region's max weight.
    region_argmax: Vec<(usize, usize)>,
    pub score: Option<RelationScore<T>>,
    pub fused: Fused<T>,
    mode: FuseMode,
}

impl<T: Scalar> StickerForward<T> {
    pub fn vector(&self) -> &[T] {
        &self.fused.vector
    }

    /// Head outputs for attribute `j` (export only).
    pub fn head_outputs(&self, params: &FusionParameters<T>, j: usize) -> Vec<Vec<T>> {
        params
            .heads
            .iter()
            .enumerate()
            .map(|(m, h)| {
                let mut o = vec![T::zero(); params.head_dim()];
                for (w, r) in self.attention[j][m].iter().zip(&self.projected_regions) {
                    axpy(&mut o, *w, &h.value.t_matvec(r));
                }
                o
            })
            .collect()
    }
}

/// Full sticker pipeline from raw region and description vectors. An empty
/// attribute list skips attention and pools regions uniformly.
pub fn sticker_forward<T: Scalar>(
    params: &FusionParameters<T>,
    regions: &[Vec<T>],
    attributes: &[Vec<T>],
    mode: FuseMode,
) -> Result<StickerForward<T>> {
    let dh = check_heads(params.dim, params.head_count)?;
    if regions.is_empty() {
        return Err(Error::Shape("sticker has no regions".into()));
    }
    let projected_regions = project(regions, &params.visual)?;
    let projected_attributes = project(attributes, &params.description)?;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let keys: Vec<Vec<Vec<T>>> = params
        .heads
        .iter()
        .map(|h| projected_regions.iter().map(|r| h.key.t_matvec(r)).collect())
        .collect();
    let mut queries = Vec::with_capacity(attributes.len());
    let mut attention = Vec::with_capacity(attributes.len());
    for a in &projected_attributes {
        let qs: Vec<Vec<T>> = params.heads.iter().map(|h| h.query.t_matvec(a)).collect();
        let att: Vec<Vec<T>> = qs
            .iter()
            .zip(&keys)
            .map(|(q, ks)| softmax(&ks.iter().map(|k| dot(q, k) * scale).collect::<Vec<_>>()))
            .collect();
        queries.push(qs);
        attention.push(att);
    }
    let n = regions.len();
    let (score, region_argmax) = if attention.is_empty() {
        (None, Vec::new())
    } else {
        let mut per_region = vec![T::neg_infinity(); n];
        let mut arg = vec![(0, 0); n];
        // Heads before attributes; strict `>` keeps the first maximum.
        for (j, att) in attention.iter().enumerate() {
            for (m, w) in att.iter().enumerate() {
                for i in 0..n {
                    if w[i] > per_region[i] {
                        per_region[i] = w[i];
                        arg[i] = (j, m);
                    }
                }
            }
        }
        let pooled = per_region.iter().copied().fold(T::neg_infinity(), T::max);
        (Some(RelationScore { per_region, pooled }), arg)
    };
    let fused = match &score {
        Some(s) => fuse(s, &projected_regions, mode)?,
        None => {
            let w = T::one() / T::from_usize(n).unwrap();
            Fused { vector: mean_rows(&projected_regions), weights: vec![w; n], fell_back: false }
        }
    };
    Ok(StickerForward {
        projected_regions,
        projected_attributes,
        queries,
        keys,
        attention,
        region_argmax,
        score,
        fused,
        mode,
    })
}

/// Back-propagates `∂L/∂(sticker vector)` into `grad`. Value maps receive no
/// gradient: they only feed the exported head outputs.
pub fn sticker_backward<T: Scalar>(
    params: &FusionParameters<T>,
    fwd: &StickerForward<T>,
    regions: &[Vec<T>],
    attributes: &[Vec<T>],
    d_vector: &[T],
    grad: &mut FusionParameters<T>,
) {
    let n = regions.len();
    let d = params.dim;
    let mut d_proj_regions = vec![vec![T::zero(); d]; n];
    let mut d_per_region = vec![T::zero(); n];

    match (&fwd.score, fwd.mode) {
        (None, _) => {
            for (g, w) in d_proj_regions.iter_mut().zip(&fwd.fused.weights) {
                axpy(g, *w, d_vector);
            }
        }
        (Some(_), FuseMode::PerRegionWeighted) if fwd.fused.fell_back => {
            for (g, w) in d_proj_regions.iter_mut().zip(&fwd.fused.weights) {
                axpy(g, *w, d_vector);
            }
        }
        (Some(score), FuseMode::PerRegionWeighted) => {
            let w = &fwd.fused.weights;
            let total: T = score.per_region.iter().copied().sum();
            let d_w: Vec<T> = fwd.projected_regions.iter().map(|r| dot(d_vector, r)).collect();
            let weighted: T = w.iter().zip(&d_w).map(|(&a, &b)| a * b).sum();
            for i in 0..n {
                axpy(&mut d_proj_regions[i], w[i], d_vector);
                d_per_region[i] = (d_w[i] - weighted) / total;
            }
        }
        (Some(score), FuseMode::LiteralScalar) => {
            let inv_n = T::one() / T::from_usize(n).unwrap();
            for g in d_proj_regions.iter_mut() {
                axpy(g, score.pooled * inv_n, d_vector);
            }
            let d_pooled = dot(d_vector, &mean_rows(&fwd.projected_regions));
            let arg = crate::linalg::argmax(&score.per_region);
            d_per_region[arg] = d_pooled;
        }
    }

    if fwd.score.is_some() {
        let dh = params.head_dim();
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut d_keys = vec![vec![vec![T::zero(); dh]; n]; params.head_count];
        let mut d_proj_attrs = vec![vec![T::zero(); d]; attributes.len()];
        // d_per_region flows only into the (attribute, head) that won each region.
        let mut d_att: BTreeMap<(usize, usize), Vec<T>> = BTreeMap::new();
        for i in 0..n {
            if d_per_region[i] != T::zero() {
                d_att.entry(fwd.region_argmax[i]).or_insert_with(|| vec![T::zero(); n])[i] += d_per_region[i];
            }
        }
        for ((j, m), da) in d_att {
            let a = &fwd.attention[j][m];
            let inner: T = a.iter().zip(&da).map(|(&x, &y)| x * y).sum();
            let d_scores: Vec<T> = a.iter().zip(&da).map(|(&x, &y)| x * (y - inner) * scale).collect();
            let q = &fwd.queries[j][m];
            let mut d_q = vec![T::zero(); dh];
            for i in 0..n {
                axpy(&mut d_q, d_scores[i], &fwd.keys[m][i]);
                axpy(&mut d_keys[m][i], d_scores[i], q);
            }
            grad.heads[m].query.add_outer(&fwd.projected_attributes[j], &d_q, T::one());
            axpy(&mut d_proj_attrs[j], T::one(), &params.heads[m].query.matvec(&d_q));
        }
        for m in 0..params.head_count {
            for i in 0..n {
                if d_keys[m][i].iter().all(|v| *v == T::zero()) {
                    continue;
                }
                grad.heads[m].key.add_outer(&fwd.projected_regions[i], &d_keys[m][i], T::one());
                let back = params.heads[m].key.matvec(&d_keys[m][i]);
                axpy(&mut d_proj_regions[i], T::one(), &back);
            }
        }
        for (x, g) in attributes.iter().zip(&d_proj_attrs) {
            params.description.backward(x, g, &mut grad.description);
        }
    }
    for (x, g) in regions.iter().zip(&d_proj_regions) {
        params.visual.backward(x, g, &mut grad.visual);
    }
}

/// Gradient of a text-space vector projected by the description map.
pub fn description_backward<T: Scalar>(params: &FusionParameters<T>, x: &[T], g: &[T], grad: &mut FusionParameters<T>) {
    params.description.backward(x, g, &mut grad.description);
}

/// Per-sticker relation-score record for heat-map rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationScoreExport {
    pub sticker_id: String,
    /// Normalized pooling weights (sum to 1).
    pub per_region: Vec<f64>,
    /// Unnormalized per-region max attention.
    pub raw_per_region: Vec<f64>,
    pub pooled: f64,
    pub per_attribute: BTreeMap<Attribute, Vec<f64>>,
}
