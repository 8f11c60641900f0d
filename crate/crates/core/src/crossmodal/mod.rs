//! Bipolar importance profiles, projection of lead attributions onto the
//! trajectory time axis, diagnosis-dependent orientation and the
//! post-processing variants that turn a profile into an importance map.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{ClassAttribution, Method};
use crate::signal::{Label, NUM_LEADS, NUM_SPATIAL_DIMS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrossmodalError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expected {expected} channels, got {got}")]
    WrongChannelCount { expected: usize, got: usize },
    #[error("case {0}: no diagnosis to orient by")]
    MissingDiagnosis(String),
    #[error("evaluation region is empty")]
    EmptyRegion,
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T, E = CrossmodalError> = std::result::Result<T, E>;

/// `values[c][t] = (A1 - A0) / 2`; positive values favour the abnormal class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipolarProfile {
    pub case_id: String,
    pub source_method: Method,
    pub values: Vec<Vec<f64>>,
}

impl BipolarProfile {
    pub fn new(case_id: impl Into<String>, source_method: Method, values: Vec<Vec<f64>>) -> Result<Self> {
        check_rect(&values, "profile")?;
        Ok(Self {
            case_id: case_id.into(),
            source_method,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_rect(values: &[Vec<f64>], what: &str) -> Result<usize> {
    let t = values.first().map_or(0, Vec::len);
    if values.is_empty() || t == 0 || values.iter().any(|r| r.len() != t) {
        return Err(CrossmodalError::ShapeMismatch(format!(
            "{what} must be a non-empty [C][T] matrix"
        )));
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CrossmodalError::NonFinite(what.into()));
    }
    Ok(t)
}

pub fn bipolar_profile(a: &ClassAttribution) -> Result<BipolarProfile> {
    let values = a
        .values
        .iter()
        .map(|row| row.iter().map(|[a0, a1]| (a1 - a0) / 2.0).collect())
        .collect();
    BipolarProfile::new(a.case_id.clone(), a.method, values)
}

/// Lead-summed profile scaled to unit peak magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedProfile {
    pub case_id: String,
    pub source_method: Method,
    pub temporal: Vec<f64>,
    /// `temporal` repeated for x, y and z.
    pub replicated: Vec<Vec<f64>>,
    /// The lead sum was identically zero.
    pub degenerate: bool,
}

impl MappedProfile {
    /// The temporal vector as a one-row profile.
    pub fn temporal_profile(&self) -> BipolarProfile {
        BipolarProfile {
            case_id: self.case_id.clone(),
            source_method: self.source_method,
            values: vec![self.temporal.clone()],
        }
    }
}

pub fn map_to_cine(phi: &BipolarProfile) -> Result<MappedProfile> {
    if phi.channels() != NUM_LEADS {
        return Err(CrossmodalError::WrongChannelCount {
            expected: NUM_LEADS,
            got: phi.channels(),
        });
    }
    let t = check_rect(&phi.values, "profile")?;
    let sums: Vec<f64> = (0..t).map(|i| phi.values.iter().map(|row| row[i]).sum()).collect();
    let peak = sums.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let degenerate = peak == 0.0;
    let temporal: Vec<f64> = if degenerate {
        vec![0.0; t]
    } else {
        sums.iter().map(|s| s / peak).collect()
    };
    Ok(MappedProfile {
        case_id: phi.case_id.clone(),
        source_method: phi.source_method,
        replicated: vec![temporal.clone(); NUM_SPATIAL_DIMS],
        temporal,
        degenerate,
    })
}

/// Flips the sign for cases the expert called normal.
pub fn orient_by_diagnosis(phi: &BipolarProfile, diagnosis: Option<Label>) -> Result<BipolarProfile> {
    let diagnosis = diagnosis.ok_or_else(|| CrossmodalError::MissingDiagnosis(phi.case_id.clone()))?;
    let mut out = phi.clone();
    if diagnosis == Label::Normal {
        out.values.iter_mut().flatten().for_each(|v| *v = -*v);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prep {
    Positive,
    Absolute,
    Scaled,
}

impl Prep {
    pub const ALL: [Prep; 3] = [Prep::Positive, Prep::Absolute, Prep::Scaled];

    pub fn key(self) -> &'static str {
        match self {
            Prep::Positive => "positive",
            Prep::Absolute => "absolute",
            Prep::Scaled => "scaled",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Prep::Positive => "Positive",
            Prep::Absolute => "Absolute",
            Prep::Scaled => "Scaled",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Prep::ALL.into_iter().find(|p| p.key().eq_ignore_ascii_case(s))
    }
}

/// Rows used for evaluation, over the full time axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    rows: Vec<usize>,
}

impl Region {
    pub fn new(rows: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut rows: Vec<usize> = rows.into_iter().collect();
        rows.sort_unstable();
        rows.dedup();
        if rows.is_empty() {
            return Err(CrossmodalError::EmptyRegion);
        }
        Ok(Self { rows })
    }

    pub fn all(channels: usize) -> Result<Self> {
        Self::new(0..channels)
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn contains(&self, row: usize) -> bool {
        self.rows.binary_search(&row).is_ok()
    }

    /// Checks that every row exists in a `channels x t` matrix with `t > 0`.
    pub fn check(&self, channels: usize, t: usize) -> Result<()> {
        if t == 0 {
            return Err(CrossmodalError::EmptyRegion);
        }
        match self.rows.last() {
            Some(&r) if r < channels => Ok(()),
            Some(&r) => Err(CrossmodalError::ShapeMismatch(format!(
                "region row {r} outside {channels} channels"
            ))),
            None => Err(CrossmodalError::EmptyRegion),
        }
    }

    /// Values of the region cells in row-major order.
    pub fn gather<T: Copy>(&self, matrix: &[Vec<T>]) -> Vec<T> {
        self.rows.iter().flat_map(|&r| matrix[r].iter().copied()).collect()
    }
}

/// Min and max over the region cells.
pub(crate) fn region_range(values: &[Vec<f64>], region: &Region) -> (f64, f64) {
    region
        .gather(values)
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Min-max rescale using the region's range; outside cells are clamped to
/// `[0, 1]`. A constant region maps everything to zero.
pub(crate) fn min_max_scale(values: &[Vec<f64>], region: &Region) -> (Vec<Vec<f64>>, bool) {
    let (lo, hi) = region_range(values, region);
    if hi <= lo {
        return (values.iter().map(|r| vec![0.0; r.len()]).collect(), true);
    }
    let scaled = values
        .iter()
        .map(|row| row.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect())
        .collect();
    (scaled, false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMap {
    pub case_id: String,
    pub prep: Prep,
    pub values: Vec<Vec<f64>>,
    /// Scaled input was constant over the region.
    pub constant: bool,
}

pub fn post_process(phi: &BipolarProfile, prep: Prep, region: &Region) -> Result<ImportanceMap> {
    let t = check_rect(&phi.values, "profile")?;
    region.check(phi.channels(), t)?;
    let (values, constant) = match prep {
        Prep::Positive => (map_cells(&phi.values, |v| v.max(0.0)), false),
        Prep::Absolute => (map_cells(&phi.values, f64::abs), false),
        Prep::Scaled => min_max_scale(&phi.values, region),
    };
    Ok(ImportanceMap {
        case_id: phi.case_id.clone(),
        prep,
        values,
        constant,
    })
}

fn map_cells(values: &[Vec<f64>], f: impl Fn(f64) -> f64) -> Vec<Vec<f64>> {
    values.iter().map(|row| row.iter().map(|&v| f(v)).collect()).collect()
}

#[cfg(test)]
mod tests;
