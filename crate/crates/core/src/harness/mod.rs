//! Cohort evaluation: the configuration pool with its on-disk cache, BCa
//! bootstrap intervals, stratified reports and case bundles for review.

mod bootstrap;
mod bundle;
mod pool;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{AgreementError, AnnotationModality, Representation};
use crate::attribution::{AttributionError, Method, MethodParams};
use crate::crossmodal::{CrossmodalError, Prep};
use crate::model::ModelError;

pub use bootstrap::{bca_bootstrap, bca_interval, percentile, BootstrapCi};
pub use bundle::{export_case_bundle, is_label_key, synthetic_annotations, CaseBundle, Overlay, LABEL_KEYS};
pub use pool::{case_digest, read_results, run_pool, write_results, CellError, PoolBaselines, PoolModels, PoolOutcome};
pub use report::{
    cohort_report, emit_report, format_ci, per_case_values, stratify, CaseValues, CohortReport, ConfigSummary,
    MetricSummary, ReportFormat, Stratum, StratumAxis,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid pool config: {0}")]
    InvalidConfig(String),
    #[error("no checkpoint for the {0} model")]
    MissingCheckpoint(&'static str),
    #[error("case {case_id}: no {modality} annotation")]
    MissingAnnotation { case_id: String, modality: &'static str },
    #[error("case {0}: no trajectory")]
    MissingTrajectory(String),
    #[error("case {0}: no model prediction")]
    MissingPrediction(String),
    #[error("case {0}: no diagnosis")]
    MissingDiagnosis(String),
    #[error("bootstrap of an empty sample")]
    EmptyInput,
    #[error("duplicate {0}")]
    Duplicate(String),
    #[error("results line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Crossmodal(#[from] CrossmodalError),
    #[error(transparent)]
    Agreement(#[from] AgreementError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub const DEFAULT_BOOTSTRAP_B: usize = 2000;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    pub methods: Vec<Method>,
    pub preps: Vec<Prep>,
    pub representations: Vec<Representation>,
    pub seeds: Vec<u64>,
    pub bootstrap_b: usize,
    pub alpha: f64,
    /// Per-method parameter overrides; methods not listed use their defaults.
    pub params: Vec<MethodParams>,
    /// Analysis window the annotations are rasterized onto.
    pub window_ms: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            preps: Prep::ALL.to_vec(),
            representations: Representation::ALL.to_vec(),
            seeds: vec![0],
            bootstrap_b: DEFAULT_BOOTSTRAP_B,
            alpha: DEFAULT_ALPHA,
            params: Vec::new(),
            window_ms: crate::signal::DEFAULT_WINDOW_MS,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(HarnessError::InvalidConfig(m.into()));
        if self.methods.is_empty() || self.preps.is_empty() || self.representations.is_empty() || self.seeds.is_empty()
        {
            return fail("methods, preps, representations and seeds must be non-empty");
        }
        if self.bootstrap_b == 0 {
            return fail("bootstrap_b must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail("alpha must lie in (0, 1)");
        }
        if !(self.window_ms.is_finite() && self.window_ms > 0.0) {
            return fail("window_ms must be positive");
        }
        let mut seen = Vec::new();
        for p in &self.params {
            if seen.contains(&p.method()) {
                return Err(HarnessError::Duplicate(format!("parameters for {}", p.method().key())));
            }
            seen.push(p.method());
        }
        Ok(())
    }

    pub fn params_for(&self, method: Method) -> MethodParams {
        self.params
            .iter()
            .find(|p| p.method() == method)
            .cloned()
            .unwrap_or_else(|| MethodParams::defaults(method))
    }
}

fn modality_key(m: AnnotationModality) -> &'static str {
    m.key()
}
