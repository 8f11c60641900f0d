//! Bias-corrected and accelerated bootstrap for the mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub method: String,
    /// Single observation or zero variance: the interval is the point.
    #[serde(default)]
    pub degenerate: bool,
}

impl BootstrapCi {
    fn point(mean: f64, b: usize) -> Self {
        Self {
            mean,
            lo: mean,
            hi: mean,
            b,
            method: "BCa".into(),
            degenerate: true,
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Linear-interpolation quantile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    match sorted.get(i + 1) {
        Some(next) if frac > 0.0 => sorted[i] + frac * (next - sorted[i]),
        _ => sorted[i],
    }
}

/// BCa endpoints from sorted bootstrap replicates, bias `z0` and
/// acceleration `a`.
pub fn bca_interval(sorted: &[f64], z0: f64, a: f64, alpha: f64) -> (f64, f64) {
    let n = std_normal();
    let adjust = |q: f64| {
        let z = z0 + n.inverse_cdf(q);
        let denom = 1.0 - a * z;
        if denom <= 0.0 {
            return if z > 0.0 { 1.0 } else { 0.0 };
        }
        n.cdf(z0 + z / denom)
    };
    (
        percentile(sorted, adjust(alpha / 2.0)),
        percentile(sorted, adjust(1.0 - alpha / 2.0)),
    )
}

pub fn bca_bootstrap(values: &[f64], b: usize, alpha: f64, seed: u64) -> Result<BootstrapCi> {
    if values.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    if b == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(HarnessError::InvalidConfig(format!(
            "bootstrap with B={b}, alpha={alpha}"
        )));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 || values.iter().all(|&v| v == values[0]) {
        return Ok(BootstrapCi::point(mean, b));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boot: Vec<f64> = (0..b)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    boot.sort_by(f64::total_cmp);

    let below = boot.iter().filter(|&&m| m < mean).count() as f64 / b as f64;
    let edge = 1.0 / (2.0 * b as f64);
    let z0 = std_normal().inverse_cdf(below.clamp(edge, 1.0 - edge));

    let total: f64 = values.iter().sum();
    let jack: Vec<f64> = values.iter().map(|v| (total - v) / (n - 1) as f64).collect();
    let jack_mean = jack.iter().sum::<f64>() / n as f64;
    let (num, den) = jack.iter().fold((0.0, 0.0), |(s3, s2), j| {
        let d = jack_mean - j;
        (s3 + d * d * d, s2 + d * d)
    });
    let a = if den > 0.0 { num / (6.0 * den.powf(1.5)) } else { 0.0 };

    let (lo, hi) = bca_interval(&boot, z0, a, alpha);
    Ok(BootstrapCi {
        mean,
        lo: lo.min(mean),
        hi: hi.max(mean),
        b,
        method: "BCa".into(),
        degenerate: false,
    })
}
