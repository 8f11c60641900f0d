//! Expert annotations, ground-truth masks and alignment metrics between an
//! importance map and the expert's salient cells.

mod annotation;
mod metrics;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::Method;
use crate::crossmodal::{min_max_scale, CrossmodalError, ImportanceMap, Prep, Region};
use crate::signal::Label;

pub use annotation::{
    annotation_to_mask, mask_to_annotation, parse_annotations, AnnotationModality, BinaryMask, ExpertAnnotation,
    Segment, LATE_MIN_SEGMENT_MS, POINT_TOLERANCE_MS, QRS_MIN_SEGMENT_MS,
};
pub use metrics::{
    average_ranks, dice, iou, optimal_threshold, spearman, spearman_rho, threshold_grid, Spearman, Threshold,
    THRESHOLD_STEPS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgreementError {
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("segment [{start_ms}, {end_ms}] ms lies outside the {window_ms} ms window")]
    OutOfWindow { start_ms: f64, end_ms: f64, window_ms: f64 },
    #[error("empty ground truth: {0}")]
    EmptyGroundTruth(String),
    #[error("ground truth is constant over the region")]
    DegenerateRegion,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Crossmodal(#[from] CrossmodalError),
}

pub type Result<T, E = AgreementError> = std::result::Result<T, E>;

/// Signal space an importance map lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// 12-lead attributions against lead annotations.
    Ecg12,
    /// Attributions of the trajectory model.
    CineDirect,
    /// 12-lead attributions projected onto the trajectory time axis.
    CineMapped,
}

impl Representation {
    pub const ALL: [Representation; 3] = [
        Representation::Ecg12,
        Representation::CineDirect,
        Representation::CineMapped,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Representation::Ecg12 => "ecg12",
            Representation::CineDirect => "cine_direct",
            Representation::CineMapped => "cine_mapped",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Representation::Ecg12 => "12-lead",
            Representation::CineDirect => "Cine (direct)",
            Representation::CineMapped => "Cine (mapped)",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.key().eq_ignore_ascii_case(s))
    }

    /// Annotation modality providing the ground truth.
    pub fn modality(self) -> AnnotationModality {
        match self {
            Representation::Ecg12 => AnnotationModality::Ecg12,
            Representation::CineDirect | Representation::CineMapped => AnnotationModality::Cine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AlignConfig {
    pub representation: Representation,
    pub method: Method,
    pub prep: Prep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub case_id: String,
    pub config: AlignConfig,
    #[serde(default)]
    pub seed: u64,
    pub dice: f64,
    pub iou: f64,
    pub spearman: f64,
    #[serde(default)]
    pub spearman_degenerate: bool,
    pub threshold: f64,
    /// Expert diagnosis.
    #[serde(default)]
    pub diagnosis: Option<Label>,
    /// Model prediction for the case.
    #[serde(default)]
    pub prediction: Option<Label>,
}

/// Region spanned by a mask's selected rows.
pub fn mask_region(gt: &BinaryMask) -> Result<Region> {
    Ok(Region::new(gt.selected_leads.iter().copied())?)
}

/// Threshold-optimized Dice with the matching IoU, plus Spearman, all over
/// the ground truth's selected rows. Positive and Absolute maps are min-max
/// rescaled over the region before the sweep.
pub fn align_case(map: &ImportanceMap, gt: &BinaryMask, config: AlignConfig) -> Result<AlignmentResult> {
    let region = mask_region(gt)?;
    let sweep = match map.prep {
        Prep::Scaled => optimal_threshold(&map.values, &gt.cells, &region)?,
        Prep::Positive | Prep::Absolute => {
            region.check(map.values.len(), map.values.first().map_or(0, Vec::len))?;
            let (scaled, _) = min_max_scale(&map.values, &region);
            optimal_threshold(&scaled, &gt.cells, &region)?
        }
    };
    let rank = spearman(&map.values, &gt.cells, &region)?;
    Ok(AlignmentResult {
        case_id: map.case_id.clone(),
        config,
        seed: 0,
        dice: sweep.dice,
        iou: sweep.iou,
        spearman: rank.rho,
        spearman_degenerate: rank.degenerate,
        threshold: sweep.threshold,
        diagnosis: None,
        prediction: None,
    })
}
