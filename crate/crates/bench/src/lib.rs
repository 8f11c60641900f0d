//! Fixtures shared by the benchmarks.

use cinemap::agreement::{annotation_to_mask, BinaryMask};
use cinemap::harness::synthetic_annotations;
use cinemap::model::{build_model, Model, ModelConfig};
use cinemap::signal::{generate_synthetic_cohort, SynthConfig, SyntheticCase};

/// A small synthetic cohort, half normal.
pub fn cohort(n: usize) -> Vec<SyntheticCase> {
    generate_synthetic_cohort(n / 2, n - n / 2, 7, &SynthConfig::default()).expect("default config is valid")
}

/// The default 12-lead architecture with seeded random weights.
pub fn ecg_model() -> Model {
    build_model(&ModelConfig::default(), 3).expect("default config is valid")
}

/// Ground-truth mask of a case's 12-lead annotation.
pub fn ecg_mask(case: &SyntheticCase) -> BinaryMask {
    let [ecg, _] = synthetic_annotations(case, "bench");
    annotation_to_mask(&ecg, case.record.sample_rate_hz, cinemap::signal::DEFAULT_WINDOW_MS)
        .expect("synthetic annotations lie in the window")
}
