use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, Result, SignalError};

/// Identity and label of one case, as needed for splitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseKey {
    pub case_id: String,
    pub patient_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Minimum number of patients per class.
const MIN_PATIENTS_PER_CLASS: usize = 5;

/// Patient-level stratified shuffle split.
///
/// Patients are labelled by the majority label of their cases (ties count as
/// abnormal), shuffled per class with a seeded generator and dealt into the
/// three partitions by rounded class-wise quotas. All cases of a patient land
/// in the same partition.
pub fn stratified_split(cases: &[CaseKey], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    let parts = [ratios.train, ratios.val, ratios.test];
    if parts.iter().any(|r| r.is_nan() || *r < 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SignalError::InvalidConfig(format!(
            "split ratios {parts:?} must be non-negative and sum to 1"
        )));
    }
    let mut seen = BTreeSet::new();
    for c in cases {
        if !seen.insert(c.case_id.as_str()) {
            return Err(SignalError::InvalidRecord(format!("duplicate case id {:?}", c.case_id)));
        }
    }

    let mut by_patient: BTreeMap<&str, Vec<&CaseKey>> = BTreeMap::new();
    for c in cases {
        by_patient.entry(c.patient_id.as_str()).or_default().push(c);
    }
    let mut patients_by_class: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for (pid, list) in &by_patient {
        let abnormal = list.iter().filter(|c| c.label == Label::Abnormal).count();
        let label = if 2 * abnormal >= list.len() {
            Label::Abnormal
        } else {
            Label::Normal
        };
        patients_by_class[label.index()].push(pid);
    }
    for (class, patients) in patients_by_class.iter().enumerate() {
        if patients.len() < MIN_PATIENTS_PER_CLASS {
            return Err(SignalError::InsufficientData(format!(
                "class {class} has {} patients, need at least {MIN_PATIENTS_PER_CLASS}",
                patients.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit::default();
    for patients in patients_by_class.iter_mut() {
        patients.shuffle(&mut rng);
        let n = patients.len();
        let n_train = (n as f64 * ratios.train).round() as usize;
        let n_val = ((n as f64 * ratios.val).round() as usize).min(n - n_train.min(n));
        let n_train = n_train.min(n);
        for (i, pid) in patients.iter().enumerate() {
            let target = if i < n_train {
                &mut split.train
            } else if i < n_train + n_val {
                &mut split.val
            } else {
                &mut split.test
            };
            target.extend(by_patient[pid].iter().map(|c| c.case_id.clone()));
        }
    }

    let label_of: BTreeMap<&str, Label> = cases.iter().map(|c| (c.case_id.as_str(), c.label)).collect();
    for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for class in Label::ALL {
            if !part.iter().any(|id| label_of[id.as_str()] == class) {
                return Err(SignalError::InsufficientData(format!(
                    "{name} partition has no {class} cases"
                )));
            }
        }
    }
    for part in [&mut split.train, &mut split.val, &mut split.test] {
        part.sort();
    }
    Ok(split)
}
