//! LIME with binary time-segment features.
//!
//! Each channel is cut into segments of `segment_len` samples; every segment
//! is one interpretable feature. Without an explicit length the shortest
//! segment that leaves `n_perturb >= features + 1` is used, which is a single
//! time step whenever the budget allows. Perturbations switch a uniformly
//! drawn number of features off (replaced by the background), the first
//! sample keeps everything on. Locality weights use the exponential kernel
//! on the Euclidean distance to the all-on vector, and a weighted
//! least-squares surrogate with intercept is fitted. A feature's coefficient
//! is spread evenly over its cells.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstsq::weighted_lstsq;
use super::{check_input, AttributionError, Result, ScoreModel};
use crate::autodiff::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeParams {
    pub n_perturb: usize,
    /// Defaults to `0.75 * sqrt(features)`.
    pub kernel_width: Option<f64>,
    /// Samples per feature; chosen automatically when absent.
    pub segment_len: Option<usize>,
}

impl Default for LimeParams {
    fn default() -> Self {
        Self {
            n_perturb: 500,
            kernel_width: None,
            segment_len: None,
        }
    }
}

fn n_features(c: usize, t: usize, len: usize) -> usize {
    c * t.div_ceil(len)
}

/// Shortest segment length giving at most `n_perturb - 1` features.
pub(crate) fn auto_segment_len(c: usize, t: usize, n_perturb: usize) -> Option<usize> {
    (1..=t.max(1)).find(|&len| n_features(c, t, len) < n_perturb)
}

fn draw_design(f: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    let mut rows = Vec::with_capacity(n);
    rows.push(vec![true; f]);
    let mut order: Vec<usize> = (0..f).collect();
    while rows.len() < n {
        let off = rng.random_range(1..=f.max(2) - 1).min(f);
        order.shuffle(rng);
        let mut z = vec![true; f];
        order[..off].iter().for_each(|&j| z[j] = false);
        rows.push(z);
    }
    rows
}

pub fn lime_explain<M: ScoreModel + ?Sized>(
    model: &M,
    x: &Tensor,
    background: &Tensor,
    params: &LimeParams,
    seed: u64,
) -> Result<[Tensor; 2]> {
    let (c, t) = check_input(model, x)?;
    if background.shape() != x.shape() {
        return Err(AttributionError::ShapeMismatch(format!(
            "background {:?} vs input {:?}",
            background.shape(),
            x.shape()
        )));
    }
    let len = match params.segment_len {
        Some(0) => return Err(AttributionError::InvalidParams("segment_len must be >= 1".into())),
        Some(l) => l,
        None => auto_segment_len(c, t, params.n_perturb).ok_or(AttributionError::BudgetTooSmall {
            budget: params.n_perturb,
            needed: c + 1,
        })?,
    };
    let segments = t.div_ceil(len);
    let f = n_features(c, t, len);
    if params.n_perturb < f + 1 {
        return Err(AttributionError::BudgetTooSmall {
            budget: params.n_perturb,
            needed: f + 1,
        });
    }
    let width = params.kernel_width.unwrap_or(0.75 * (f as f64).sqrt());
    if !(width.is_finite() && width > 0.0) {
        return Err(AttributionError::InvalidParams(format!("kernel_width {width}")));
    }
    let feature_of = |ci: usize, ti: usize| ci * segments + ti / len;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attempt = 0;
    let sol = loop {
        let design = draw_design(f, params.n_perturb, &mut rng);
        let inputs: Vec<Tensor> = design
            .iter()
            .map(|z| {
                let mut v = background.clone();
                for ci in 0..c {
                    for ti in 0..t {
                        if z[feature_of(ci, ti)] {
                            v.data_mut()[ci * t + ti] = x.data()[ci * t + ti];
                        }
                    }
                }
                v
            })
            .collect();
        let ys = model.outputs(&inputs)?;
        let weights: Vec<f64> = design
            .iter()
            .map(|z| {
                let d2 = z.iter().filter(|&&b| !b).count() as f64;
                (-d2 / (width * width)).exp().sqrt()
            })
            .collect();
        let a = DMatrix::from_fn(design.len(), f + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                f64::from(u8::from(design[i][j - 1]))
            }
        });
        let b = DMatrix::from_fn(design.len(), 2, |i, k| ys[i][k]);
        let sol = weighted_lstsq(&a, &b, &weights)?;
        if sol.rank == f + 1 {
            break sol;
        }
        attempt += 1;
        if attempt == 2 {
            return Err(AttributionError::DegenerateDesign {
                rank: sol.rank,
                columns: f + 1,
            });
        }
    };

    let spread = |k: usize| -> Result<Tensor> {
        let mut data = Vec::with_capacity(c * t);
        for ci in 0..c {
            for ti in 0..t {
                let seg = ti / len;
                let cells = (t - seg * len).min(len) as f64;
                data.push(sol.coef[(1 + feature_of(ci, ti), k)] / cells);
            }
        }
        Ok(Tensor::new(vec![c, t], data)?)
    };
    Ok([spread(0)?, spread(1)?])
}
