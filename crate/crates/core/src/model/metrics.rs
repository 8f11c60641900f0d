use serde::{Deserialize, Serialize};

use super::{Model, ModelError, Result, Sample};
use crate::signal::Label;

/// Accuracy, macro F1 and `confusion[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: [[usize; 2]; 2],
}

/// Macro F1 is the unweighted mean of per-class F1; a class with no true and
/// no predicted members scores 0.
pub fn classification_metrics(truth: &[Label], predicted: &[Label]) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(ModelError::EmptySet);
    }
    if truth.len() != predicted.len() {
        return Err(ModelError::InvalidConfig(format!(
            "{} labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut confusion = [[0usize; 2]; 2];
    for (t, p) in truth.iter().zip(predicted) {
        confusion[t.index()][p.index()] += 1;
    }
    let correct = confusion[0][0] + confusion[1][1];
    let f1 = |c: usize| {
        let tp = confusion[c][c] as f64;
        let fp = confusion[1 - c][c] as f64;
        let fn_ = confusion[c][1 - c] as f64;
        let denom = 2.0 * tp + fp + fn_;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    };
    Ok(EvalReport {
        accuracy: correct as f64 / truth.len() as f64,
        macro_f1: (f1(0) + f1(1)) / 2.0,
        confusion,
    })
}

pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(ModelError::EmptySet);
    }
    let inputs: Vec<_> = samples.iter().map(|s| s.input.clone()).collect();
    let predicted: Vec<Label> = model
        .predict_proba_batch(&inputs)?
        .into_iter()
        .map(|p| if p[1] > p[0] { Label::Abnormal } else { Label::Normal })
        .collect();
    let truth: Vec<Label> = samples.iter().map(|s| s.label).collect();
    classification_metrics(&truth, &predicted)
}
