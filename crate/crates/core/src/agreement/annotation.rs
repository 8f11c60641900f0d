//! Expert annotation records and their rasterization into binary masks.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{AgreementError, Result};
use crate::signal::{lead_index, window_samples, Label, LEAD_NAMES, NUM_LEADS, QRS_REGION_END_MS};

/// Half-width of the tolerance window around a point annotation.
pub const POINT_TOLERANCE_MS: f64 = 10.0;
/// Shortest segment inside the QRS region.
pub const QRS_MIN_SEGMENT_MS: f64 = 25.0;
/// Shortest segment after the QRS region.
pub const LATE_MIN_SEGMENT_MS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationModality {
    Ecg12,
    Cine,
}

impl AnnotationModality {
    pub fn key(self) -> &'static str {
        match self {
            AnnotationModality::Ecg12 => "ecg12",
            AnnotationModality::Cine => "cine",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segment {
    Interval { start_ms: f64, end_ms: f64 },
    Point { point_ms: f64 },
}

mod diagnosis_name {
    use super::*;

    pub fn serialize<S: Serializer>(d: &Option<Label>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match d {
            Some(l) => s.serialize_str(l.name()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Label>, D::Error> {
        let name: Option<String> = Option::deserialize(d)?;
        name.map(|n| {
            Label::ALL
                .into_iter()
                .find(|l| l.name().eq_ignore_ascii_case(&n))
                .ok_or_else(|| serde::de::Error::custom(format!("unknown diagnosis {n:?}")))
        })
        .transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertAnnotation {
    pub case_id: String,
    pub annotator_id: String,
    pub modality: AnnotationModality,
    #[serde(with = "diagnosis_name", default)]
    pub diagnosis: Option<Label>,
    /// Lead names, or `["all"]`.
    #[serde(default)]
    pub leads: Vec<String>,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub free_text: String,
    /// Segments already sit on sample boundaries; skip point expansion and
    /// minimum-length widening.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub rasterized: bool,
}

impl ExpertAnnotation {
    /// Row indices the annotation covers.
    pub fn selected_rows(&self) -> Result<Vec<usize>> {
        match self.modality {
            AnnotationModality::Cine => {
                if self.leads.iter().all(|l| l.eq_ignore_ascii_case("all")) {
                    Ok(vec![0])
                } else {
                    Err(AgreementError::InvalidAnnotation(format!(
                        "{}: cine annotations cover all dimensions, got leads {:?}",
                        self.case_id, self.leads
                    )))
                }
            }
            AnnotationModality::Ecg12 => {
                if self.leads.is_empty() {
                    return Err(AgreementError::InvalidAnnotation(format!(
                        "{}: no leads selected",
                        self.case_id
                    )));
                }
                if self.leads.iter().any(|l| l.eq_ignore_ascii_case("all")) {
                    return Ok((0..NUM_LEADS).collect());
                }
                let mut rows = self
                    .leads
                    .iter()
                    .map(|l| {
                        lead_index(l).ok_or_else(|| AgreementError::InvalidAnnotation(format!("unknown lead {l:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                rows.sort_unstable();
                rows.dedup();
                Ok(rows)
            }
        }
    }
}

/// Ground-truth cells. Rows are the 12 leads, or one temporal row for cine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    pub cells: Vec<Vec<bool>>,
    pub selected_leads: Vec<usize>,
}

impl BinaryMask {
    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn len(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self) -> usize {
        self.cells.iter().flatten().filter(|&&b| b).count()
    }

    /// Repeats a single-row mask `n` times, selecting every row.
    pub fn broadcast_rows(&self, n: usize) -> Result<Self> {
        if self.rows() != 1 {
            return Err(AgreementError::ShapeMismatch(format!(
                "only single-row masks broadcast, got {} rows",
                self.rows()
            )));
        }
        Ok(Self {
            cells: vec![self.cells[0].clone(); n],
            selected_leads: (0..n).collect(),
        })
    }
}

fn ms_to_index(ms: f64, sample_rate_hz: u32) -> f64 {
    (ms * f64::from(sample_rate_hz) / 1000.0).round()
}

fn minimum_for(center_ms: f64) -> f64 {
    if center_ms < QRS_REGION_END_MS {
        QRS_MIN_SEGMENT_MS
    } else {
        LATE_MIN_SEGMENT_MS
    }
}

/// Millisecond interval a segment covers, widened and clipped to the window.
fn segment_bounds(seg: &Segment, rasterized: bool, window_ms: f64) -> Result<(f64, f64)> {
    let (start, end) = match *seg {
        Segment::Point { point_ms } => {
            if !point_ms.is_finite() || point_ms < 0.0 || point_ms > window_ms {
                return Err(AgreementError::OutOfWindow {
                    start_ms: point_ms,
                    end_ms: point_ms,
                    window_ms,
                });
            }
            if rasterized {
                return Err(AgreementError::InvalidAnnotation(
                    "rasterized annotations carry intervals only".into(),
                ));
            }
            (point_ms - POINT_TOLERANCE_MS, point_ms + POINT_TOLERANCE_MS)
        }
        Segment::Interval { start_ms, end_ms } => {
            if !(start_ms.is_finite() && end_ms.is_finite() && start_ms <= end_ms) {
                return Err(AgreementError::InvalidAnnotation(format!(
                    "segment [{start_ms}, {end_ms}) is not an interval"
                )));
            }
            if end_ms < 0.0 || start_ms > window_ms {
                return Err(AgreementError::OutOfWindow {
                    start_ms,
                    end_ms,
                    window_ms,
                });
            }
            let min = minimum_for((start_ms + end_ms) / 2.0);
            if !rasterized && end_ms - start_ms < min {
                let center = (start_ms + end_ms) / 2.0;
                (center - min / 2.0, center + min / 2.0)
            } else {
                (start_ms, end_ms)
            }
        }
    };
    Ok((start.max(0.0), end.min(window_ms)))
}

/// Rasterizes an annotation onto a `window_ms` grid.
///
/// Bounds round to the nearest sample; starts are inclusive, ends exclusive.
/// Every segment covers at least one sample.
pub fn annotation_to_mask(ann: &ExpertAnnotation, sample_rate_hz: u32, window_ms: f64) -> Result<BinaryMask> {
    if sample_rate_hz == 0 || !(window_ms.is_finite() && window_ms > 0.0) {
        return Err(AgreementError::InvalidAnnotation(
            "sample rate and window must be positive".into(),
        ));
    }
    let t = window_samples(window_ms, sample_rate_hz);
    let rows = ann.selected_rows()?;
    let n_rows = match ann.modality {
        AnnotationModality::Ecg12 => NUM_LEADS,
        AnnotationModality::Cine => 1,
    };
    let mut timeline = vec![false; t];
    for seg in &ann.segments {
        let (start, end) = segment_bounds(seg, ann.rasterized, window_ms)?;
        let i0 = (ms_to_index(start, sample_rate_hz) as usize).min(t.saturating_sub(1));
        let i1 = (ms_to_index(end, sample_rate_hz) as usize).clamp(i0 + 1, t);
        timeline[i0..i1].iter_mut().for_each(|b| *b = true);
    }
    if !timeline.contains(&true) {
        return Err(AgreementError::EmptyGroundTruth(ann.case_id.clone()));
    }
    let mut cells = vec![vec![false; t]; n_rows];
    for &r in &rows {
        cells[r] = timeline.clone();
    }
    Ok(BinaryMask {
        cells,
        selected_leads: rows,
    })
}

/// Inverse of [`annotation_to_mask`] for masks whose selected rows agree.
pub fn mask_to_annotation(
    mask: &BinaryMask,
    modality: AnnotationModality,
    sample_rate_hz: u32,
    case_id: &str,
    annotator_id: &str,
    diagnosis: Option<Label>,
) -> Result<ExpertAnnotation> {
    let first = *mask
        .selected_leads
        .first()
        .ok_or_else(|| AgreementError::EmptyGroundTruth(case_id.into()))?;
    let timeline = mask
        .cells
        .get(first)
        .ok_or_else(|| AgreementError::ShapeMismatch(format!("selected row {first} missing")))?;
    if mask.selected_leads.iter().any(|&r| mask.cells.get(r) != Some(timeline)) {
        return Err(AgreementError::ShapeMismatch("selected rows differ".into()));
    }
    let to_ms = |i: usize| i as f64 * 1000.0 / f64::from(sample_rate_hz);
    let mut segments = Vec::new();
    let mut i = 0;
    while i < timeline.len() {
        if timeline[i] {
            let start = i;
            while i < timeline.len() && timeline[i] {
                i += 1;
            }
            segments.push(Segment::Interval {
                start_ms: to_ms(start),
                end_ms: to_ms(i),
            });
        } else {
            i += 1;
        }
    }
    let leads = match modality {
        AnnotationModality::Ecg12 => mask.selected_leads.iter().map(|&r| LEAD_NAMES[r].to_string()).collect(),
        AnnotationModality::Cine => vec!["all".to_string()],
    };
    Ok(ExpertAnnotation {
        case_id: case_id.into(),
        annotator_id: annotator_id.into(),
        modality,
        diagnosis,
        leads,
        segments,
        free_text: String::new(),
        rasterized: true,
    })
}

/// Parses either one annotation object or an array of them.
pub fn parse_annotations(text: &str) -> Result<Vec<ExpertAnnotation>> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| AgreementError::InvalidAnnotation(e.to_string()))?;
    let parsed = match value {
        serde_json::Value::Array(_) => serde_json::from_value(value),
        other => serde_json::from_value(other).map(|a| vec![a]),
    };
    parsed.map_err(|e| AgreementError::InvalidAnnotation(e.to_string()))
}
