//! Self-contained case documents for the review and annotation UI.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agreement::{AnnotationModality, ExpertAnnotation, Representation, Segment};
use crate::attribution::{ClassAttribution, Method};
use crate::crossmodal::{bipolar_profile, MappedProfile};
use crate::signal::{DatasetEntry, Label, SyntheticCase, LEAD_NAMES, NUM_LEADS};

use super::Result;

/// Keys that would reveal the reference or model label.
pub const LABEL_KEYS: [&str; 3] = ["label", "diagnosis", "prediction"];

pub fn is_label_key(key: &str) -> bool {
    LABEL_KEYS.iter().any(|k| k.eq_ignore_ascii_case(key))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayScale {
    pub min: f64,
    pub max: f64,
}

/// Bipolar importance drawn over one representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub representation: Representation,
    pub method: Method,
    pub scale: OverlayScale,
    pub values: Vec<Vec<f64>>,
}

impl Overlay {
    fn new(representation: Representation, method: Method, values: Vec<Vec<f64>>) -> Self {
        let (min, max) = values
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Self {
            representation,
            method,
            scale: OverlayScale { min, max },
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseBundle {
    pub format: String,
    pub version: u32,
    pub blind: bool,
    pub case_id: String,
    pub sample_rate_hz: u32,
    pub window_ms: f64,
    pub lead_names: Vec<String>,
    pub ecg: Vec<Vec<f64>>,
    pub trajectory: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Label>,
    #[serde(default)]
    pub overlays: Vec<Overlay>,
    #[serde(default)]
    pub annotations: Vec<ExpertAnnotation>,
}

fn strip_label_keys(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !is_label_key(k));
            map.values_mut().for_each(strip_label_keys);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_label_keys),
        _ => {}
    }
}

/// Builds the UI document for one case. Blind bundles carry only the
/// signals: no overlays, annotations, labels or predictions.
pub fn export_case_bundle(
    case: &DatasetEntry,
    attributions: &[ClassAttribution],
    mapped: Option<&MappedProfile>,
    annotations: &[ExpertAnnotation],
    prediction: Option<Label>,
    blind: bool,
) -> Result<Value> {
    let record = &case.record;
    let mut overlays = Vec::new();
    let mut kept_annotations = Vec::new();
    if !blind {
        for a in attributions {
            let rep = if a.channels() == NUM_LEADS {
                Representation::Ecg12
            } else {
                Representation::CineDirect
            };
            overlays.push(Overlay::new(rep, a.method, bipolar_profile(a)?.values));
        }
        if let Some(m) = mapped {
            overlays.push(Overlay::new(
                Representation::CineMapped,
                m.source_method,
                m.replicated.clone(),
            ));
        }
        kept_annotations = annotations
            .iter()
            .filter(|a| a.case_id == record.case_id)
            .cloned()
            .collect();
    }
    let bundle = CaseBundle {
        format: "cinemap-case-bundle".into(),
        version: 1,
        blind,
        case_id: record.case_id.clone(),
        sample_rate_hz: record.sample_rate_hz,
        window_ms: record.len() as f64 * 1000.0 / f64::from(record.sample_rate_hz),
        lead_names: LEAD_NAMES.iter().map(|s| s.to_string()).collect(),
        ecg: record.leads.clone(),
        trajectory: case.cine.as_ref().map(|c| c.path.clone()),
        label: (!blind).then_some(record.label),
        prediction: if blind { None } else { prediction },
        overlays,
        annotations: kept_annotations,
    };
    let mut value = serde_json::to_value(&bundle).expect("bundles serialize");
    if blind {
        strip_label_keys(&mut value);
    }
    Ok(value)
}

/// The annotations an expert would give a synthetic case: its ground-truth
/// window on the leads that carry the feature, and the same window on the
/// trajectory.
pub fn synthetic_annotations(case: &SyntheticCase, annotator_id: &str) -> [ExpertAnnotation; 2] {
    let segment = Segment::Interval {
        start_ms: case.truth.start_ms,
        end_ms: case.truth.end_ms,
    };
    let ecg = ExpertAnnotation {
        case_id: case.record.case_id.clone(),
        annotator_id: annotator_id.into(),
        modality: AnnotationModality::Ecg12,
        diagnosis: Some(case.record.label),
        leads: case.salient_leads.iter().map(|&i| LEAD_NAMES[i].to_string()).collect(),
        segments: vec![segment],
        free_text: case.truth.description.clone(),
        rasterized: false,
    };
    let cine = ExpertAnnotation {
        modality: AnnotationModality::Cine,
        leads: vec!["all".into()],
        ..ecg.clone()
    };
    [ecg, cine]
}
