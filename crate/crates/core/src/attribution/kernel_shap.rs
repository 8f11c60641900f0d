//! Kernel SHAP over groups of cells.
//!
//! The `[C][T]` input is partitioned into groups of contiguous time segments
//! (spanning all channels, or one group per channel and segment). A coalition
//! keeps its groups at the input value and replaces the rest with the
//! background. Shapley values solve a kernel-weighted regression with the
//! efficiency constraint `sum(phi) = f(x) - f(background)` eliminated
//! analytically. Each group value is then spread evenly over its cells.
//!
//! The budget counts model evaluations, two of which go to `f(x)` and
//! `f(background)`. Coalitions are enumerated exhaustively when they fit;
//! otherwise whole subset sizes are enumerated while the budget allows and
//! the remainder is sampled in complementary pairs from the Shapley kernel.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution};
use serde::{Deserialize, Serialize};

use super::lstsq::weighted_lstsq;
use super::{check_input, AttributionError, Result, ScoreModel};
use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One group per time segment covering every channel.
    TimeSegments,
    /// One group per (channel, time segment).
    ChannelSegments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelShapParams {
    /// Model evaluations, including `f(x)` and `f(background)`.
    pub budget: usize,
    pub segment_ms: f64,
    pub sample_rate_hz: u32,
    pub grouping: Grouping,
}

impl Default for KernelShapParams {
    fn default() -> Self {
        Self {
            budget: 100,
            segment_ms: 25.0,
            sample_rate_hz: crate::signal::DEFAULT_SAMPLE_RATE_HZ,
            grouping: Grouping::TimeSegments,
        }
    }
}

impl KernelShapParams {
    pub fn segment_samples(&self) -> usize {
        ((self.segment_ms * f64::from(self.sample_rate_hz) / 1000.0).round() as usize).max(1)
    }
}

/// Group index of every cell (row-major) and the size of each group.
fn group_cells(c: usize, t: usize, params: &KernelShapParams) -> (Vec<usize>, Vec<usize>) {
    let len = params.segment_samples();
    let segments = t.div_ceil(len);
    let n_groups = match params.grouping {
        Grouping::TimeSegments => segments,
        Grouping::ChannelSegments => c * segments,
    };
    let mut of_cell = Vec::with_capacity(c * t);
    let mut sizes = vec![0; n_groups];
    for ci in 0..c {
        for ti in 0..t {
            let g = match params.grouping {
                Grouping::TimeSegments => ti / len,
                Grouping::ChannelSegments => ci * segments + ti / len,
            };
            of_cell.push(g);
            sizes[g] += 1;
        }
    }
    (of_cell, sizes)
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[derive(Default)]
struct Coalitions {
    masks: Vec<Vec<bool>>,
    weights: Vec<f64>,
    index: HashMap<Vec<bool>, usize>,
}

impl Coalitions {
    /// Adds `mask` or, if present, bumps its weight. Returns whether it was new.
    fn add(&mut self, mask: Vec<bool>, weight: f64) -> bool {
        if let Some(&i) = self.index.get(&mask) {
            self.weights[i] += weight;
            return false;
        }
        self.index.insert(mask.clone(), self.masks.len());
        self.masks.push(mask);
        self.weights.push(weight);
        true
    }

    fn from_subset(m: usize, subset: &[usize]) -> Vec<bool> {
        let mut mask = vec![false; m];
        subset.iter().for_each(|&j| mask[j] = true);
        mask
    }
}

fn exact_coalitions(m: usize) -> Coalitions {
    let mut co = Coalitions::default();
    for s in 1..m {
        let w = (m - 1) as f64 / (binom(m, s) * (s * (m - s)) as f64);
        for subset in combinations(m, s) {
            co.add(Coalitions::from_subset(m, &subset), w);
        }
    }
    co
}

fn sampled_coalitions(m: usize, n_samples: usize, rng: &mut ChaCha8Rng) -> Result<Coalitions> {
    let n_sizes = m / 2;
    let n_paired = (m - 1) / 2;
    let mut weight: Vec<f64> = (1..=n_sizes).map(|s| (m - 1) as f64 / (s * (m - s)) as f64).collect();
    weight.iter_mut().take(n_paired).for_each(|w| *w *= 2.0);
    let total: f64 = weight.iter().sum();
    weight.iter_mut().for_each(|w| *w /= total);

    let mut co = Coalitions::default();
    let mut left = n_samples;
    let mut remaining = weight.clone();
    let mut full = 0;
    for s in 1..=n_sizes {
        let paired = s <= n_paired;
        let count = binom(m, s) * if paired { 2.0 } else { 1.0 };
        if left as f64 * remaining[s - 1] / count < 1.0 - 1e-8 {
            break;
        }
        full += 1;
        left -= count as usize;
        if remaining[s - 1] < 1.0 {
            let scale = 1.0 - remaining[s - 1];
            remaining.iter_mut().for_each(|w| *w /= scale);
        }
        let w = weight[s - 1] / binom(m, s) / if paired { 2.0 } else { 1.0 };
        for subset in combinations(m, s) {
            let mask = Coalitions::from_subset(m, &subset);
            if paired {
                co.add(mask.iter().map(|b| !b).collect(), w);
            }
            co.add(mask, w);
        }
    }

    let fixed = co.masks.len();
    if full < n_sizes && left > 0 {
        let mut probs: Vec<f64> = weight.clone();
        probs.iter_mut().take(n_paired).for_each(|w| *w /= 2.0);
        let probs = &probs[full..];
        let dist = WeightedIndex::new(probs).map_err(|e| AttributionError::InvalidParams(e.to_string()))?;
        let mut order: Vec<usize> = (0..m).collect();
        let mut draws = 0;
        while left > 0 && draws < 4 * n_samples {
            draws += 1;
            let s = dist.sample(rng) + full + 1;
            order.shuffle(rng);
            let mask = Coalitions::from_subset(m, &order[..s]);
            let complement: Vec<bool> = mask.iter().map(|b| !b).collect();
            if co.add(mask, 1.0) {
                left -= 1;
            }
            if left > 0 && s <= n_paired && co.add(complement, 1.0) {
                left -= 1;
            }
        }
        let weight_left: f64 = weight[full..].iter().sum();
        let sampled: f64 = co.weights[fixed..].iter().sum();
        if sampled > 0.0 {
            co.weights[fixed..].iter_mut().for_each(|w| *w *= weight_left / sampled);
        }
    }
    Ok(co)
}

fn masked_input(x: &Tensor, background: &Tensor, group_of: &[usize], mask: &[bool]) -> Tensor {
    let mut out = background.clone();
    for ((o, &v), &g) in out.data_mut().iter_mut().zip(x.data()).zip(group_of) {
        if mask[g] {
            *o = v;
        }
    }
    out
}

/// Group-level Shapley estimates for both outputs.
pub fn kernel_shap<M: ScoreModel + ?Sized>(
    model: &M,
    x: &Tensor,
    background: &Tensor,
    params: &KernelShapParams,
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
    if !(params.segment_ms.is_finite() && params.segment_ms > 0.0) || params.sample_rate_hz == 0 {
        return Err(AttributionError::InvalidParams(
            "segment_ms and sample_rate_hz must be positive".into(),
        ));
    }
    let (group_of, sizes) = group_cells(c, t, params);
    let m = sizes.len();
    if params.budget < m + 2 {
        return Err(AttributionError::BudgetTooSmall {
            budget: params.budget,
            needed: m + 2,
        });
    }
    let ends = model.outputs(&[x.clone(), background.clone()])?;
    let (fx, fb) = (ends[0], ends[1]);
    let delta = [fx[0] - fb[0], fx[1] - fb[1]];

    let phi: Vec<[f64; 2]> = if m == 1 {
        vec![delta]
    } else {
        let n_coalitions = params.budget - 2;
        let exact = m < usize::BITS as usize - 1 && (1usize << m) - 2 <= n_coalitions;
        let co = if exact {
            exact_coalitions(m)
        } else {
            sampled_coalitions(m, n_coalitions, &mut ChaCha8Rng::seed_from_u64(seed))?
        };
        let inputs: Vec<Tensor> = co
            .masks
            .iter()
            .map(|mask| masked_input(x, background, &group_of, mask))
            .collect();
        let ys = model.outputs(&inputs)?;
        let rows = co.masks.len();
        let last = m - 1;
        let design = DMatrix::from_fn(rows, last, |i, j| {
            f64::from(u8::from(co.masks[i][j])) - f64::from(u8::from(co.masks[i][last]))
        });
        let targets = DMatrix::from_fn(rows, 2, |i, k| {
            ys[i][k] - fb[k] - f64::from(u8::from(co.masks[i][last])) * delta[k]
        });
        let sol = weighted_lstsq(&design, &targets, &co.weights)?;
        (0..m)
            .map(|j| {
                let mut v = [0.0; 2];
                for (k, vk) in v.iter_mut().enumerate() {
                    *vk = if j < last {
                        sol.coef[(j, k)]
                    } else {
                        delta[k] - (0..last).map(|i| sol.coef[(i, k)]).sum::<f64>()
                    };
                }
                v
            })
            .collect()
    };

    let spread = |k: usize| -> Result<Tensor> {
        let data = group_of.iter().map(|&g| phi[g][k] / sizes[g] as f64).collect();
        Ok(Tensor::new(vec![c, t], data)?)
    };
    Ok([spread(0)?, spread(1)?])
}
