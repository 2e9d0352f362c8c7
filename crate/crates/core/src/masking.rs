//! Unstructured sparsity masks built from score matrices.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iofmt::TensorF32;
use crate::scoring::ScoreMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("shape mismatch: mask is {mask:?}, other is {other:?}")]
    Shape {
        mask: (usize, usize),
        other: Vec<usize>,
    },
    #[error("sparsity ratio {0} outside [0,1]")]
    BadRatio(f64),
    #[error("mask tensor value {value} at index {index} is not 0 or 1")]
    BadMaskValue { index: usize, value: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Rank every entry of the matrix against every other.
    #[default]
    PerLayer,
    /// Rank entries within each output row.
    PerRow,
}

/// Number of entries to prune out of `total` at `ratio`, rounded down.
///
/// A 1e-9 slack absorbs binary representation error so that e.g. `0.29 · 100`
/// yields 29 rather than 28.
pub fn prune_count(ratio: f64, total: usize) -> usize {
    let k = (ratio * total as f64 + 1e-9).floor() as usize;
    k.min(total)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
    granularity: Granularity,
}

impl PruneMask {
    pub fn all_kept(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![true; rows * cols],
            granularity: Granularity::PerLayer,
        }
    }

    pub fn from_keep(
        rows: usize,
        cols: usize,
        keep: Vec<bool>,
        granularity: Granularity,
    ) -> Result<Self, MaskError> {
        if keep.len() != rows * cols {
            return Err(MaskError::Shape {
                mask: (rows, cols),
                other: vec![keep.len()],
            });
        }
        Ok(Self {
            rows,
            cols,
            keep,
            granularity,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn is_kept(&self, i: usize, j: usize) -> bool {
        self.keep[i * self.cols + j]
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn pruned_count(&self) -> usize {
        self.keep.iter().filter(|&&k| !k).count()
    }

    /// Achieved sparsity, `pruned / total` (0 for an empty mask).
    pub fn sparsity(&self) -> f64 {
        if self.keep.is_empty() {
            0.0
        } else {
            self.pruned_count() as f64 / self.keep.len() as f64
        }
    }

    pub fn pruned_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.keep
            .iter()
            .enumerate()
            .filter(|(_, &k)| !k)
            .map(|(i, _)| i)
    }

    /// 1.0 for kept entries, 0.0 for pruned ones.
    pub fn to_tensor(&self) -> TensorF32 {
        let data = self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
        TensorF32::new(vec![self.rows, self.cols], data).expect("dims match")
    }

    pub fn from_tensor(t: &TensorF32, granularity: Granularity) -> Result<Self, MaskError> {
        let (rows, cols) = t.matrix_dims().ok_or_else(|| MaskError::Shape {
            mask: (0, 0),
            other: t.dims().to_vec(),
        })?;
        let keep = t
            .data()
            .iter()
            .enumerate()
            .map(|(index, &value)| {
                if value == 1.0 {
                    Ok(true)
                } else if value == 0.0 {
                    Ok(false)
                } else {
                    Err(MaskError::BadMaskValue { index, value })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_keep(rows, cols, keep, granularity)
    }
}

/// Total order on `(score, flat index)`: ties resolve to the lower row-major index.
fn by_score(scores: &[f32]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b))
}

/// Marks the `k` lowest-scoring positions of `scores` as pruned.
fn prune_lowest(scores: &[f32], k: usize, keep: &mut [bool]) {
    if k == 0 {
        return;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, by_score(scores));
    }
    for &idx in &order[..k] {
        keep[idx] = false;
    }
}

pub fn build_mask(
    scores: &ScoreMatrix,
    ratio: f64,
    granularity: Granularity,
) -> Result<PruneMask, MaskError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(MaskError::BadRatio(ratio));
    }
    let (rows, cols) = scores.dims();
    let data = scores.values().data();
    let mut keep = vec![true; rows * cols];
    match granularity {
        Granularity::PerLayer => prune_lowest(data, prune_count(ratio, rows * cols), &mut keep),
        Granularity::PerRow => {
            let k = prune_count(ratio, cols);
            if cols > 0 {
                keep.par_chunks_mut(cols)
                    .zip(data.par_chunks(cols))
                    .for_each(|(row_keep, row_scores)| prune_lowest(row_scores, k, row_keep));
            }
        }
    }
    Ok(PruneMask {
        rows,
        cols,
        keep,
        granularity,
    })
}

/// Zeroes every pruned entry; the input is left untouched.
pub fn apply_mask(weight: &TensorF32, mask: &PruneMask) -> Result<TensorF32, MaskError> {
    if weight.matrix_dims() != Some(mask.dims()) {
        return Err(MaskError::Shape {
            mask: mask.dims(),
            other: weight.dims().to_vec(),
        });
    }
    let data = weight
        .data()
        .iter()
        .zip(&mask.keep)
        .map(|(&w, &k)| if k { w } else { 0.0 })
        .collect();
    Ok(TensorF32::new(weight.dims().to_vec(), data).expect("dims match"))
}

/// Intersection over union of the pruned sets; 1.0 when neither prunes anything.
pub fn mask_jaccard(a: &PruneMask, b: &PruneMask) -> Result<f64, MaskError> {
    let (inter, union) = pruned_overlap(a, b)?;
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// `(|pruned(a) ∩ pruned(b)|, |pruned(a) ∪ pruned(b)|)`.
pub fn pruned_overlap(a: &PruneMask, b: &PruneMask) -> Result<(usize, usize), MaskError> {
    if a.dims() != b.dims() {
        return Err(MaskError::Shape {
            mask: a.dims(),
            other: vec![b.rows, b.cols],
        });
    }
    let mut inter = 0;
    let mut union = 0;
    for (&ka, &kb) in a.keep.iter().zip(&b.keep) {
        if !ka && !kb {
            inter += 1;
        }
        if !ka || !kb {
            union += 1;
        }
    }
    Ok((inter, union))
}
