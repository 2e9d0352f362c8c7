//! Significance scores for unstructured pruning.
//!
//! Every method maps `(W, ‖X‖₂, |G|_p)` to a nonnegative matrix `S` of the same
//! shape as `W`. Lower scores are pruned first.
//!
//! | method          | score                                   |
//! |-----------------|-----------------------------------------|
//! | `magnitude`     | `|W|`                                   |
//! | `wanda`         | `|W| · ‖X_j‖`                           |
//! | `gblm_gradient` | `|W| · G`                               |
//! | `gblm_pruner`   | `|W| · (α·G + ‖X_j‖)`                   |
//! | `hgla`          | `|W| · ‖X_j‖ / G'`, `G' = G · mean(|W|·‖X‖) / mean(G)` |
//!
//! All arithmetic is carried out in `f64`; results are stored as `f32`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iofmt::TensorF32;

/// GBLM mixing factor used when none is given.
pub const DEFAULT_ALPHA: f64 = 100.0;

/// Score assigned to HGLA entries whose rescaled gradient is zero. Larger than any
/// other stored score, so those entries are never pruned before a finite one.
pub const ZERO_GRADIENT_SCORE: f32 = f32::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{tensor} has a non-finite value at flat index {index}")]
    NonFinite { tensor: &'static str, index: usize },
    #[error("{tensor} has a negative value at flat index {index}")]
    Negative { tensor: &'static str, index: usize },
    #[error("alpha must be finite and >= 0, got {0}")]
    BadAlpha(f64),
    #[error("gradient norms are all zero; cannot rescale")]
    DegenerateGradient,
    #[error("unknown pruning method `{0}`")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Magnitude,
    Wanda,
    GblmGradient,
    GblmPruner,
    Hgla,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Magnitude,
        Method::Wanda,
        Method::GblmGradient,
        Method::GblmPruner,
        Method::Hgla,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Magnitude => "magnitude",
            Method::Wanda => "wanda",
            Method::GblmGradient => "gblm_gradient",
            Method::GblmPruner => "gblm_pruner",
            Method::Hgla => "hgla",
        }
    }

    /// Whether the method reads gradient norms.
    pub fn needs_gradients(self) -> bool {
        matches!(self, Method::GblmGradient | Method::GblmPruner | Method::Hgla)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ScoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| ScoreError::UnknownMethod(s.to_string()))
    }
}

/// Validated inputs for one weight matrix.
#[derive(Debug, Clone)]
pub struct ScoreInputs {
    weight: TensorF32,
    act_norm: TensorF32,
    grad_norm: TensorF32,
    alpha: f64,
}

impl ScoreInputs {
    pub fn new(
        weight: TensorF32,
        act_norm: TensorF32,
        grad_norm: TensorF32,
        alpha: f64,
    ) -> Result<Self, ScoreError> {
        let (m, n) = weight
            .matrix_dims()
            .ok_or_else(|| ScoreError::Shape(format!("weight dims {:?}", weight.dims())))?;
        if act_norm.dims() != [n] {
            return Err(ScoreError::Shape(format!(
                "act_norm dims {:?}, expected [{n}]",
                act_norm.dims()
            )));
        }
        if grad_norm.dims() != [m, n] {
            return Err(ScoreError::Shape(format!(
                "grad_norm dims {:?}, expected [{m}, {n}]",
                grad_norm.dims()
            )));
        }
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(ScoreError::BadAlpha(alpha));
        }
        for (tensor, t, nonneg) in [
            ("weight", &weight, false),
            ("act_norm", &act_norm, true),
            ("grad_norm", &grad_norm, true),
        ] {
            for (index, &v) in t.data().iter().enumerate() {
                if !v.is_finite() {
                    return Err(ScoreError::NonFinite { tensor, index });
                }
                if nonneg && v < 0.0 {
                    return Err(ScoreError::Negative { tensor, index });
                }
            }
        }
        Ok(Self {
            weight,
            act_norm,
            grad_norm,
            alpha,
        })
    }

    /// Inputs for methods that ignore gradients; the gradient slot is filled with ones.
    pub fn without_gradients(weight: TensorF32, act_norm: TensorF32) -> Result<Self, ScoreError> {
        let dims = weight.dims().to_vec();
        let ones = TensorF32::new(dims.clone(), vec![1.0; dims.iter().product()])
            .map_err(|e| ScoreError::Shape(e.to_string()))?;
        Self::new(weight, act_norm, ones, DEFAULT_ALPHA)
    }

    pub fn weight(&self) -> &TensorF32 {
        &self.weight
    }

    pub fn act_norm(&self) -> &TensorF32 {
        &self.act_norm
    }

    pub fn grad_norm(&self) -> &TensorF32 {
        &self.grad_norm
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self, ScoreError> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(ScoreError::BadAlpha(alpha));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn cols(&self) -> usize {
        self.weight.dims()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    values: TensorF32,
    method: Method,
}

impl ScoreMatrix {
    pub fn new(values: TensorF32, method: Method) -> Result<Self, ScoreError> {
        if values.matrix_dims().is_none() {
            return Err(ScoreError::Shape(format!("score dims {:?}", values.dims())));
        }
        for (index, &v) in values.data().iter().enumerate() {
            if !v.is_finite() {
                return Err(ScoreError::NonFinite {
                    tensor: "scores",
                    index,
                });
            }
            if v < 0.0 {
                return Err(ScoreError::Negative {
                    tensor: "scores",
                    index,
                });
            }
        }
        Ok(Self { values, method })
    }

    pub fn values(&self) -> &TensorF32 {
        &self.values
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.matrix_dims().expect("validated as matrix")
    }

    pub fn into_values(self) -> TensorF32 {
        self.values
    }
}

/// Evaluates `f(i, j, |W|, act[j], grad[i,j])` in `f64`, one output row per task.
fn elementwise<F>(input: &ScoreInputs, method: Method, f: F) -> ScoreMatrix
where
    F: Fn(f64, f64, f64) -> f64 + Sync,
{
    let n = input.cols();
    let act = input.act_norm.data();
    let mut out = vec![0.0f32; input.weight.len()];
    out.par_chunks_mut(n.max(1))
        .zip(input.weight.data().par_chunks(n.max(1)))
        .zip(input.grad_norm.data().par_chunks(n.max(1)))
        .for_each(|((o, w), g)| {
            for j in 0..o.len() {
                let v = f((w[j] as f64).abs(), act[j] as f64, g[j] as f64);
                o[j] = to_score(v);
            }
        });
    let values = TensorF32::new(input.weight.dims().to_vec(), out).expect("dims match");
    ScoreMatrix { values, method }
}

fn to_score(v: f64) -> f32 {
    if v >= ZERO_GRADIENT_SCORE as f64 {
        ZERO_GRADIENT_SCORE
    } else {
        v as f32
    }
}

pub fn score_magnitude(input: &ScoreInputs) -> ScoreMatrix {
    elementwise(input, Method::Magnitude, |w, _, _| w)
}

pub fn score_wanda(input: &ScoreInputs) -> ScoreMatrix {
    elementwise(input, Method::Wanda, |w, a, _| w * a)
}

pub fn score_gblm_gradient(input: &ScoreInputs) -> ScoreMatrix {
    elementwise(input, Method::GblmGradient, |w, _, g| w * g)
}

pub fn score_gblm_pruner(input: &ScoreInputs) -> ScoreMatrix {
    let alpha = input.alpha;
    elementwise(input, Method::GblmPruner, move |w, a, g| w * (alpha * g + a))
}

/// Sequential `f64` means of `|W|·‖X‖` and of `G` over all `m·n` entries.
fn rescale_means(input: &ScoreInputs) -> (f64, f64) {
    let n = input.cols();
    let act = input.act_norm.data();
    let count = input.weight.len() as f64;
    let mut num = 0.0f64;
    for (k, &w) in input.weight.data().iter().enumerate() {
        num += (w as f64).abs() * act[k % n] as f64;
    }
    let grad: f64 = input.grad_norm.data().iter().map(|&g| g as f64).sum();
    (num / count, grad / count)
}

/// Puts gradient norms on the scale of the activation-weighted magnitudes:
/// `G' = G · mean(|W|·‖X‖) / mean(G)`.
pub fn rescale_gradients(input: &ScoreInputs) -> Result<TensorF32, ScoreError> {
    let (num_mean, grad_mean) = rescale_means(input);
    if grad_mean <= 0.0 || input.weight.is_empty() {
        return Err(ScoreError::DegenerateGradient);
    }
    let factor = num_mean / grad_mean;
    let data = input
        .grad_norm
        .data()
        .iter()
        .map(|&g| (g as f64 * factor) as f32)
        .collect();
    Ok(TensorF32::new(input.grad_norm.dims().to_vec(), data).expect("dims match"))
}

/// High-gradient, low-activation score. Entries with strong activations and weak
/// gradients score high and are kept; weak activations with strong gradients are
/// pruned first.
pub fn score_hgla(input: &ScoreInputs) -> Result<ScoreMatrix, ScoreError> {
    let (num_mean, grad_mean) = rescale_means(input);
    if grad_mean <= 0.0 || input.weight.is_empty() {
        return Err(ScoreError::DegenerateGradient);
    }
    let factor = num_mean / grad_mean;
    Ok(elementwise(input, Method::Hgla, move |w, a, g| {
        let scaled = g * factor;
        if scaled == 0.0 {
            f64::INFINITY
        } else {
            (w * a / scaled).abs()
        }
    }))
}

pub fn score(method: Method, input: &ScoreInputs) -> Result<ScoreMatrix, ScoreError> {
    Ok(match method {
        Method::Magnitude => score_magnitude(input),
        Method::Wanda => score_wanda(input),
        Method::GblmGradient => score_gblm_gradient(input),
        Method::GblmPruner => score_gblm_pruner(input),
        Method::Hgla => score_hgla(input)?,
    })
}

/// Min, arithmetic mean and max of a score matrix.
pub fn score_stats(scores: &ScoreMatrix) -> (f64, f64, f64) {
    let data = scores.values().data();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &v in data {
        let v = v as f64;
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    (min, sum / data.len().max(1) as f64, max)
}
