//! Synthetic paired cases: a smooth 3D dipole loop is projected onto twelve
//! leads through a fixed lead matrix, so the lead signals and the trajectory
//! correspond exactly (up to the added lead noise).
//!
//! The loop is a sum of Gaussian bumps: three for the QRS loop (inside the
//! first 150 ms) and one for the T loop. Abnormal cases carry one of two
//! perturbations, each confined to a known window:
//!
//! * [`Abnormality::StOffset`]: a plateau offset of the dipole starting at the
//!   end of the QRS loop, with 10 ms raised-cosine edges.
//! * [`Abnormality::QrsWidening`]: the QRS loop is stretched by
//!   `widening_factor` and a slurred terminal bump is appended.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    window_samples, CineTrajectory, EcgRecord, GroundTruthWindow, Label, Result, SignalError, NUM_LEADS,
    QRS_REGION_END_MS,
};

const DOWER_JSON: &str = include_str!("../../data/dower_lead_matrix.json");

/// Fixed 12x3 dipole-to-lead transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadMatrix {
    pub coefficients: Vec<[f64; 3]>,
}

impl LeadMatrix {
    /// Dower coefficients shipped in `data/dower_lead_matrix.json`.
    pub fn dower() -> Self {
        #[derive(Deserialize)]
        struct File {
            coefficients: Vec<[f64; 3]>,
        }
        let file: File = serde_json::from_str(DOWER_JSON).expect("bundled lead matrix is valid JSON");
        Self {
            coefficients: file.coefficients,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coefficients.len() != NUM_LEADS {
            return Err(SignalError::InvalidConfig(format!(
                "lead matrix needs {NUM_LEADS} rows, got {}",
                self.coefficients.len()
            )));
        }
        if self.coefficients.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SignalError::InvalidConfig("lead matrix has non-finite entries".into()));
        }
        Ok(())
    }

    /// `leads[l][t] = sum_d M[l][d] * path[d][t]`.
    pub fn project(&self, path: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let t_len = path.first().map_or(0, Vec::len);
        self.coefficients
            .iter()
            .map(|row| {
                (0..t_len)
                    .map(|t| row[0] * path[0][t] + row[1] * path[1][t] + row[2] * path[2][t])
                    .collect()
            })
            .collect()
    }

    /// Absolute projection of a spatial direction onto each lead.
    pub fn lead_response(&self, dir: [f64; 3]) -> Vec<f64> {
        self.coefficients
            .iter()
            .map(|r| (r[0] * dir[0] + r[1] * dir[1] + r[2] * dir[2]).abs())
            .collect()
    }
}

impl Default for LeadMatrix {
    fn default() -> Self {
        Self::dower()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Abnormality {
    StOffset,
    QrsWidening,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub window_ms: f64,
    pub sample_rate_hz: u32,
    pub noise_sigma: f64,
    pub lead_matrix: LeadMatrix,
    pub abnormality: Abnormality,
    /// Uniform range of the QRS onset.
    pub qrs_onset_ms: (f64, f64),
    /// Uniform range of the baseline QRS duration.
    pub qrs_duration_ms: (f64, f64),
    /// Uniform range of the T-loop peak time.
    pub t_peak_ms: (f64, f64),
    pub qrs_amplitude: f64,
    pub t_amplitude: f64,
    /// Relative jitter applied to bump amplitudes and direction components.
    pub shape_jitter: f64,
    pub st_offset: f64,
    pub st_duration_ms: f64,
    pub widening_factor: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            window_ms: super::DEFAULT_WINDOW_MS,
            sample_rate_hz: super::DEFAULT_SAMPLE_RATE_HZ,
            noise_sigma: 0.01,
            lead_matrix: LeadMatrix::dower(),
            abnormality: Abnormality::StOffset,
            qrs_onset_ms: (20.0, 40.0),
            qrs_duration_ms: (70.0, 90.0),
            t_peak_ms: (260.0, 300.0),
            qrs_amplitude: 1.6,
            t_amplitude: 0.4,
            shape_jitter: 0.15,
            st_offset: 0.3,
            st_duration_ms: 100.0,
            widening_factor: 1.6,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window_ms", self.window_ms),
            ("qrs_amplitude", self.qrs_amplitude),
            ("t_amplitude", self.t_amplitude),
            ("st_offset", self.st_offset),
            ("st_duration_ms", self.st_duration_ms),
            ("widening_factor", self.widening_factor),
            ("qrs_onset_ms.1", self.qrs_onset_ms.1),
            ("qrs_duration_ms.0", self.qrs_duration_ms.0),
            ("t_peak_ms.0", self.t_peak_ms.0),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SignalError::InvalidConfig(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        for (name, v) in [("noise_sigma", self.noise_sigma), ("shape_jitter", self.shape_jitter)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SignalError::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        for (name, (lo, hi)) in [
            ("qrs_onset_ms", self.qrs_onset_ms),
            ("qrs_duration_ms", self.qrs_duration_ms),
            ("t_peak_ms", self.t_peak_ms),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                return Err(SignalError::InvalidConfig(format!(
                    "{name} range ({lo}, {hi}) is invalid"
                )));
            }
        }
        if self.sample_rate_hz == 0 {
            return Err(SignalError::InvalidConfig("sample_rate_hz must be positive".into()));
        }
        if self.qrs_onset_ms.1 + self.qrs_duration_ms.1 > QRS_REGION_END_MS {
            return Err(SignalError::InvalidConfig(format!(
                "QRS loop must end within {QRS_REGION_END_MS} ms"
            )));
        }
        let latest_end = match self.abnormality {
            Abnormality::StOffset => self.qrs_onset_ms.1 + self.qrs_duration_ms.1 + self.st_duration_ms,
            Abnormality::QrsWidening => self.qrs_onset_ms.1 + self.qrs_duration_ms.1 * self.widening_factor,
        };
        if latest_end > self.window_ms || self.t_peak_ms.1 > self.window_ms {
            return Err(SignalError::InvalidConfig(
                "perturbation or T loop exceeds the window".into(),
            ));
        }
        if window_samples(self.window_ms, self.sample_rate_hz) == 0 {
            return Err(SignalError::InvalidConfig("window holds no samples".into()));
        }
        self.lead_matrix.validate()
    }
}

/// One generated case with its exact trajectory and known salient window.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCase {
    pub record: EcgRecord,
    pub trajectory: CineTrajectory,
    pub truth: GroundTruthWindow,
    /// Leads on which the salient feature projects strongly (≥ half the peak).
    pub salient_leads: Vec<usize>,
}

struct Bump {
    center_ms: f64,
    width_ms: f64,
    vector: [f64; 3],
}

fn gaussian(t: f64, c: f64, w: f64) -> f64 {
    (-0.5 * ((t - c) / w).powi(2)).exp()
}

/// Plateau on `[start, end]` with raised-cosine ramps of `ramp` ms on both sides.
fn plateau(t: f64, start: f64, end: f64, ramp: f64) -> f64 {
    if t < start - ramp || t > end + ramp {
        0.0
    } else if t < start {
        0.5 * (1.0 - (std::f64::consts::PI * (t - start + ramp) / ramp).cos())
    } else if t > end {
        0.5 * (1.0 + (std::f64::consts::PI * (t - end) / ramp).cos())
    } else {
        1.0
    }
}

fn jittered(rng: &mut ChaCha8Rng, base: [f64; 3], scale: f64, jitter: f64) -> [f64; 3] {
    let mut v = base;
    for x in &mut v {
        *x += jitter * rng.random_range(-1.0..=1.0);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let amp = scale * (1.0 + jitter * rng.random_range(-1.0..=1.0));
    v.map(|x| amp * x / norm)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn strong_leads(response: &[f64]) -> Vec<usize> {
    let max = response.iter().copied().fold(0.0, f64::max);
    (0..response.len()).filter(|&l| response[l] >= 0.5 * max).collect()
}

/// Deterministic per `seed`: shape parameters come from one ChaCha stream and
/// lead noise from another.
pub fn generate_synthetic_case(seed: u64, label: Label, config: &SynthConfig) -> Result<SyntheticCase> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = config.shape_jitter;
    let onset = uniform(&mut rng, config.qrs_onset_ms);
    let duration = uniform(&mut rng, config.qrs_duration_ms);
    let t_peak = uniform(&mut rng, config.t_peak_ms);

    let stretch = if label == Label::Abnormal && config.abnormality == Abnormality::QrsWidening {
        config.widening_factor
    } else {
        1.0
    };
    let d = duration * stretch;
    let qa = config.qrs_amplitude;
    let mut bumps = vec![
        Bump {
            center_ms: onset + 0.2 * d,
            width_ms: 0.08 * d,
            vector: jittered(&mut rng, [-0.3, 0.2, 0.5], 0.2 * qa, jitter),
        },
        Bump {
            center_ms: onset + 0.5 * d,
            width_ms: 0.12 * d,
            vector: jittered(&mut rng, [0.7, 0.6, -0.35], qa, jitter),
        },
        Bump {
            center_ms: onset + 0.8 * d,
            width_ms: 0.1 * d,
            vector: jittered(&mut rng, [-0.4, -0.5, -0.6], 0.35 * qa, jitter),
        },
        Bump {
            center_ms: t_peak,
            width_ms: 30.0,
            vector: jittered(&mut rng, [0.5, 0.4, -0.3], config.t_amplitude, jitter),
        },
    ];
    let st_dir = jittered(&mut rng, [0.3, 0.25, -0.75], config.st_offset, jitter);
    let slur_dir = jittered(&mut rng, [-0.6, 0.5, 0.45], 0.4 * qa, jitter);

    let qrs_end = onset + duration;
    let (truth, feature_dir, st) = match (label, config.abnormality) {
        (Label::Normal, _) => (
            GroundTruthWindow::new(onset, qrs_end, "baseline QRS interval")?,
            None,
            None,
        ),
        (Label::Abnormal, Abnormality::StOffset) => {
            let end = qrs_end + config.st_duration_ms;
            (
                GroundTruthWindow::new(qrs_end, end, "ST-level offset")?,
                Some(st_dir),
                Some((qrs_end, end)),
            )
        }
        (Label::Abnormal, Abnormality::QrsWidening) => {
            bumps.push(Bump {
                center_ms: onset + 0.93 * d,
                width_ms: 0.06 * d,
                vector: slur_dir,
            });
            (
                GroundTruthWindow::new(qrs_end, onset + d, "QRS widening")?,
                Some(slur_dir),
                None,
            )
        }
    };

    let t_len = window_samples(config.window_ms, config.sample_rate_hz);
    let dt = 1000.0 / f64::from(config.sample_rate_hz);
    let mut path = vec![vec![0.0; t_len]; 3];
    for i in 0..t_len {
        let t = i as f64 * dt;
        for b in &bumps {
            let g = gaussian(t, b.center_ms, b.width_ms);
            for (row, v) in path.iter_mut().zip(b.vector) {
                row[i] += g * v;
            }
        }
        if let Some((start, end)) = st {
            let p = plateau(t, start, end, 10.0);
            for (row, v) in path.iter_mut().zip(st_dir) {
                row[i] += p * v;
            }
        }
    }

    let mut leads = config.lead_matrix.project(&path);
    if config.noise_sigma > 0.0 {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        noise_rng.set_stream(1);
        let normal = Normal::new(0.0, config.noise_sigma)
            .map_err(|e| SignalError::InvalidConfig(format!("noise_sigma: {e}")))?;
        for v in leads.iter_mut().flatten() {
            *v += normal.sample(&mut noise_rng);
        }
    }

    let salient_leads = match feature_dir {
        Some(dir) => strong_leads(&config.lead_matrix.lead_response(dir)),
        None => {
            let clean = config.lead_matrix.project(&path);
            let lo = ((truth.start_ms / dt).round() as usize).min(t_len);
            let hi = ((truth.end_ms / dt).round() as usize).min(t_len);
            let peaks: Vec<f64> = clean
                .iter()
                .map(|row| row[lo..hi].iter().fold(0.0f64, |m, v| m.max(v.abs())))
                .collect();
            strong_leads(&peaks)
        }
    };

    let case_id = format!("syn-{seed:08}");
    let patient_id = format!("pat-{seed:08}");
    Ok(SyntheticCase {
        record: EcgRecord::new(case_id.clone(), patient_id, label, config.sample_rate_hz, leads)?,
        trajectory: CineTrajectory::new(case_id, config.sample_rate_hz, path)?,
        truth,
        salient_leads,
    })
}

/// `n_normal` normal cases followed by `n_abnormal` abnormal ones, with
/// per-case seeds derived from `seed`.
pub fn generate_synthetic_cohort(
    n_normal: usize,
    n_abnormal: usize,
    seed: u64,
    config: &SynthConfig,
) -> Result<Vec<SyntheticCase>> {
    let base = seed.wrapping_mul(1_000_003);
    (0..n_normal + n_abnormal)
        .map(|i| {
            let label = if i < n_normal { Label::Normal } else { Label::Abnormal };
            generate_synthetic_case(base.wrapping_add(i as u64), label, config)
        })
        .collect()
}
