//! Domain data model: multi-lead records, spatial trajectories, windowing,
//! patient-level splits, synthetic cases and NDJSON dataset files.

mod io;
mod split;
mod synth;
mod window;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

pub use io::{load_dataset, parse_dataset, save_dataset, write_dataset, DatasetEntry};
pub use split::{stratified_split, CaseKey, DatasetSplit, SplitRatios};
pub use synth::{
    generate_synthetic_case, generate_synthetic_cohort, Abnormality, LeadMatrix, SynthConfig, SyntheticCase,
};
pub use window::{truncate_window, truncate_window_at, window_samples};

pub const NUM_LEADS: usize = 12;
pub const NUM_SPATIAL_DIMS: usize = 3;
pub const DEFAULT_SAMPLE_RATE_HZ: u32 = 500;
pub const DEFAULT_WINDOW_MS: f64 = 400.0;
/// End of the QRS region of the analysis window.
pub const QRS_REGION_END_MS: f64 = 150.0;

pub const LEAD_NAMES: [&str; NUM_LEADS] = [
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6",
];

pub fn lead_index(name: &str) -> Option<usize> {
    LEAD_NAMES.iter().position(|l| l.eq_ignore_ascii_case(name))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("series too short: need {needed} samples, have {available}")]
    SeriesTooShort { needed: usize, available: usize },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: parse error: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: missing field {field:?}")]
    SchemaError { line: usize, field: String },
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T, E = SignalError> = std::result::Result<T, E>;

/// Binary diagnosis. Serialized as `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Normal = 0,
    Abnormal = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Normal, Label::Abnormal];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Normal),
            1 => Some(Label::Abnormal),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "Normal",
            Label::Abnormal => "Abnormal",
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        Label::from_index(v as usize).ok_or_else(|| format!("label must be 0 or 1, got {v}"))
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn check_matrix(rows: &[Vec<f64>], expected_rows: usize, what: &str) -> Result<usize> {
    if rows.len() != expected_rows {
        return Err(SignalError::InvalidRecord(format!(
            "{what} must have {expected_rows} rows, got {}",
            rows.len()
        )));
    }
    let t = rows[0].len();
    if rows.iter().any(|r| r.len() != t) {
        return Err(SignalError::InvalidRecord(format!("{what} rows have unequal lengths")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SignalError::InvalidRecord(format!("{what} contains non-finite values")));
    }
    Ok(t)
}

/// Twelve simultaneous leads in millivolts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgRecord {
    pub case_id: String,
    pub patient_id: String,
    pub label: Label,
    pub sample_rate_hz: u32,
    pub leads: Vec<Vec<f64>>,
}

impl EcgRecord {
    pub fn new(
        case_id: impl Into<String>,
        patient_id: impl Into<String>,
        label: Label,
        sample_rate_hz: u32,
        leads: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let record = Self {
            case_id: case_id.into(),
            patient_id: patient_id.into(),
            label,
            sample_rate_hz,
            leads,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(SignalError::InvalidRecord("sample_rate_hz must be positive".into()));
        }
        check_matrix(&self.leads, NUM_LEADS, "leads").map(|_| ())
    }

    pub fn len(&self) -> usize {
        self.leads.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[12][T]` model input.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_rows(&self.leads).expect("validated record is rectangular")
    }
}

/// Three-dimensional trajectory `path[d][t]`, `d` in x, y, z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CineTrajectory {
    pub case_id: String,
    pub sample_rate_hz: u32,
    pub path: Vec<Vec<f64>>,
}

impl CineTrajectory {
    pub fn new(case_id: impl Into<String>, sample_rate_hz: u32, path: Vec<Vec<f64>>) -> Result<Self> {
        let traj = Self {
            case_id: case_id.into(),
            sample_rate_hz,
            path,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(SignalError::InvalidRecord("sample_rate_hz must be positive".into()));
        }
        check_matrix(&self.path, NUM_SPATIAL_DIMS, "cine path").map(|_| ())
    }

    pub fn len(&self) -> usize {
        self.path.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_rows(&self.path).expect("validated trajectory is rectangular")
    }
}

/// Known salient interval of a synthetic case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthWindow {
    pub start_ms: f64,
    pub end_ms: f64,
    #[serde(default)]
    pub description: String,
}

impl GroundTruthWindow {
    pub fn new(start_ms: f64, end_ms: f64, description: impl Into<String>) -> Result<Self> {
        if !(start_ms >= 0.0 && end_ms > start_ms && end_ms.is_finite()) {
            return Err(SignalError::InvalidRecord(format!(
                "window [{start_ms}, {end_ms}) is not a valid interval"
            )));
        }
        Ok(Self {
            start_ms,
            end_ms,
            description: description.into(),
        })
    }
}
