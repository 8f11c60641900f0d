//! Path-integral gradient methods.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_input, AttributionError, BaselineSet, GradientModel, Result};
use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IgBaseline {
    Zeros,
    /// Per-cell mean of the baseline set.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IgParams {
    pub steps: usize,
    /// Noisy copies of the input to average over; `1` disables noise.
    pub noise_samples: usize,
    pub noise_sigma: f64,
    pub baseline: IgBaseline,
}

impl Default for IgParams {
    fn default() -> Self {
        Self {
            steps: 50,
            noise_samples: 40,
            noise_sigma: 0.15,
            baseline: IgBaseline::Zeros,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradShapParams {
    pub n_samples: usize,
    pub noise_sigma: f64,
}

impl Default for GradShapParams {
    fn default() -> Self {
        Self {
            n_samples: 50,
            noise_sigma: 0.0,
        }
    }
}

fn normal(sigma: f64) -> Result<Normal<f64>> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(AttributionError::InvalidParams(format!(
            "noise_sigma {sigma} must be >= 0"
        )));
    }
    Normal::new(0.0, sigma).map_err(|e| AttributionError::InvalidParams(e.to_string()))
}

fn add_noise(x: &Tensor, dist: &Normal<f64>, rng: &mut ChaCha8Rng) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v += dist.sample(rng));
    out
}

/// Integrated gradients with a midpoint Riemann sum:
/// `(x - b) * mean_i grad f_k(b + (i + 1/2)/steps * (x - b))`.
///
/// With `noise_samples > 1` the attribution is averaged over inputs
/// `x + N(0, noise_sigma^2)`, each integrated from the same baseline.
pub fn integrated_gradients<M: GradientModel + ?Sized>(
    model: &M,
    x: &Tensor,
    baseline: &Tensor,
    params: &IgParams,
    seed: u64,
) -> Result<[Tensor; 2]> {
    check_input(model, x)?;
    if baseline.shape() != x.shape() {
        return Err(AttributionError::ShapeMismatch(format!(
            "baseline {:?} vs input {:?}",
            baseline.shape(),
            x.shape()
        )));
    }
    if params.steps == 0 || params.noise_samples == 0 {
        return Err(AttributionError::InvalidParams(
            "steps and noise_samples must be >= 1".into(),
        ));
    }
    let dist = normal(params.noise_sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = params.noise_samples > 1 && params.noise_sigma > 0.0;

    let mut acc = [Tensor::zeros(x.shape()), Tensor::zeros(x.shape())];
    for _ in 0..params.noise_samples {
        let xs = if noisy {
            add_noise(x, &dist, &mut rng)
        } else {
            x.clone()
        };
        let delta = xs.zip_map(baseline, |a, b| a - b)?;
        let points: Vec<Tensor> = (0..params.steps)
            .map(|i| {
                let alpha = (i as f64 + 0.5) / params.steps as f64;
                baseline.zip_map(&delta, |b, d| b + alpha * d)
            })
            .collect::<std::result::Result<_, _>>()?;
        let mut grad_sum = [Tensor::zeros(x.shape()), Tensor::zeros(x.shape())];
        for (_, grads) in model.output_gradients(&points)? {
            for k in 0..2 {
                grad_sum[k].add_assign(&grads[k]);
            }
        }
        for k in 0..2 {
            let term = grad_sum[k].zip_map(&delta, |g, d| g * d / params.steps as f64)?;
            acc[k].add_assign(&term);
        }
    }
    let n = params.noise_samples as f64;
    Ok(acc.map(|a| a.map(|v| v / n)))
}

/// Expected gradients: draw a baseline `b` and `alpha ~ U[0,1]`, take the
/// gradient at `b + alpha (x - b)` (plus optional Gaussian noise), multiply
/// by `x - b` and average over `n_samples` draws.
pub fn gradient_shap<M: GradientModel + ?Sized>(
    model: &M,
    x: &Tensor,
    baselines: &BaselineSet,
    params: &GradShapParams,
    seed: u64,
) -> Result<[Tensor; 2]> {
    check_input(model, x)?;
    if baselines.is_empty() {
        return Err(AttributionError::EmptyBaselineSet);
    }
    if baselines.shape() != x.shape() {
        return Err(AttributionError::ShapeMismatch(format!(
            "baselines {:?} vs input {:?}",
            baselines.shape(),
            x.shape()
        )));
    }
    if params.n_samples == 0 {
        return Err(AttributionError::InvalidParams("n_samples must be >= 1".into()));
    }
    let dist = normal(params.noise_sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deltas = Vec::with_capacity(params.n_samples);
    let mut points = Vec::with_capacity(params.n_samples);
    for _ in 0..params.n_samples {
        let b = &baselines.records()[rng.random_range(0..baselines.len())];
        let alpha: f64 = rng.random();
        let delta = x.zip_map(b, |a, b| a - b)?;
        let mut point = b.zip_map(&delta, |b, d| b + alpha * d)?;
        if params.noise_sigma > 0.0 {
            point = add_noise(&point, &dist, &mut rng);
        }
        deltas.push(delta);
        points.push(point);
    }
    let mut acc = [Tensor::zeros(x.shape()), Tensor::zeros(x.shape())];
    for ((_, grads), delta) in model.output_gradients(&points)?.into_iter().zip(&deltas) {
        for k in 0..2 {
            acc[k].add_assign(&grads[k].zip_map(delta, |g, d| g * d)?);
        }
    }
    let n = params.n_samples as f64;
    Ok(acc.map(|a| a.map(|v| v / n)))
}
