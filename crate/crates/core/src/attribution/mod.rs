//! Per-class feature attributions `A[c][t][k]` for a two-class scorer.
//!
//! Every method explains both class outputs from one set of model
//! evaluations, which gives the same result as two independent runs with the
//! same seed. Targets are whatever [`ScoreModel::outputs`] returns; for the
//! residual classifier these are the softmax probabilities.

mod gradient;
mod kernel_shap;
mod lime;
mod lstsq;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor};
use crate::model::{Mode, Model, ModelError};

pub use gradient::{gradient_shap, integrated_gradients, GradShapParams, IgBaseline, IgParams};
pub use kernel_shap::{kernel_shap, Grouping, KernelShapParams};
pub use lime::{lime_explain, LimeParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttributionError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("baseline set is empty")]
    EmptyBaselineSet,
    #[error("budget of {budget} evaluations is too small, need at least {needed}")]
    BudgetTooSmall { budget: usize, needed: usize },
    #[error("perturbation design is rank deficient ({rank} of {columns} columns)")]
    DegenerateDesign { rank: usize, columns: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<AutodiffError> for AttributionError {
    fn from(e: AutodiffError) -> Self {
        AttributionError::Model(ModelError::Autodiff(e))
    }
}

pub type Result<T, E = AttributionError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ig")]
    IntegratedGradients,
    #[serde(rename = "gradshap")]
    GradientShap,
    #[serde(rename = "kernelshap")]
    KernelShap,
    #[serde(rename = "lime")]
    Lime,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::IntegratedGradients,
        Method::GradientShap,
        Method::KernelShap,
        Method::Lime,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Method::IntegratedGradients => "ig",
            Method::GradientShap => "gradshap",
            Method::KernelShap => "kernelshap",
            Method::Lime => "lime",
        }
    }

    /// Display name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::IntegratedGradients => "IG",
            Method::GradientShap => "GradSHAP",
            Method::KernelShap => "Kernel SHAP",
            Method::Lime => "LIME",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.key().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Method together with its parameter record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum MethodParams {
    Ig(IgParams),
    #[serde(rename = "gradshap")]
    GradShap(GradShapParams),
    #[serde(rename = "kernelshap")]
    KernelShap(KernelShapParams),
    Lime(LimeParams),
}

impl MethodParams {
    pub fn defaults(method: Method) -> Self {
        match method {
            Method::IntegratedGradients => MethodParams::Ig(IgParams::default()),
            Method::GradientShap => MethodParams::GradShap(GradShapParams::default()),
            Method::KernelShap => MethodParams::KernelShap(KernelShapParams::default()),
            Method::Lime => MethodParams::Lime(LimeParams::default()),
        }
    }

    pub fn method(&self) -> Method {
        match self {
            MethodParams::Ig(_) => Method::IntegratedGradients,
            MethodParams::GradShap(_) => Method::GradientShap,
            MethodParams::KernelShap(_) => Method::KernelShap,
            MethodParams::Lime(_) => Method::Lime,
        }
    }
}

/// Raw attributions `values[c][t][k]`, `k = 0` normal and `k = 1` abnormal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAttribution {
    pub case_id: String,
    pub method: Method,
    pub params: MethodParams,
    pub values: Vec<Vec<[f64; 2]>>,
}

impl ClassAttribution {
    pub fn from_slices(case_id: impl Into<String>, params: MethodParams, slices: [Tensor; 2]) -> Result<Self> {
        let [a0, a1] = slices;
        if a0.shape() != a1.shape() || a0.rank() != 2 {
            return Err(AttributionError::ShapeMismatch(format!(
                "class slices {:?} and {:?} must both be [C][T]",
                a0.shape(),
                a1.shape()
            )));
        }
        if !a0.is_finite() || !a1.is_finite() {
            return Err(AttributionError::Model(ModelError::Autodiff(AutodiffError::NonFinite(
                "attribution".into(),
            ))));
        }
        let t = a0.shape()[1];
        let values = a0
            .data()
            .chunks_exact(t)
            .zip(a1.data().chunks_exact(t))
            .map(|(r0, r1)| r0.iter().zip(r1).map(|(&v0, &v1)| [v0, v1]).collect())
            .collect();
        Ok(Self {
            case_id: case_id.into(),
            method: params.method(),
            params,
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

    /// `[C][T]` attribution for class `k`.
    pub fn slice(&self, k: usize) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .map(|row| row.iter().map(|v| v[k]).collect())
            .collect()
    }
}

/// Reference inputs (normal cases disjoint from the model's training data).
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSet {
    records: Vec<Tensor>,
}

impl BaselineSet {
    pub fn new(records: Vec<Tensor>) -> Result<Self> {
        let first = records.first().ok_or(AttributionError::EmptyBaselineSet)?;
        if let Some(bad) = records.iter().find(|r| r.shape() != first.shape()) {
            return Err(AttributionError::ShapeMismatch(format!(
                "baselines {:?} and {:?} differ",
                first.shape(),
                bad.shape()
            )));
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[Tensor] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        self.records[0].shape()
    }

    /// Per-cell mean.
    pub fn mean(&self) -> Tensor {
        let n = self.records.len() as f64;
        let mut acc = Tensor::zeros(self.shape());
        for r in &self.records {
            for (a, v) in acc.data_mut().iter_mut().zip(r.data()) {
                *a += v;
            }
        }
        acc.map(|v| v / n)
    }
}

/// Two-output scorer over `[C][T]` inputs.
pub trait ScoreModel: Sync {
    fn channels(&self) -> usize;
    /// Outputs `[f_0, f_1]` for each input.
    fn outputs(&self, inputs: &[Tensor]) -> Result<Vec<[f64; 2]>>;
}

/// Scorer with input gradients of both outputs.
pub trait GradientModel: ScoreModel {
    /// Outputs and `[grad f_0, grad f_1]` (each `[C][T]`) for each input.
    fn output_gradients(&self, inputs: &[Tensor]) -> Result<Vec<([f64; 2], [Tensor; 2])>>;
}

const GRAD_CHUNK: usize = 32;

impl ScoreModel for Model {
    fn channels(&self) -> usize {
        self.config().in_channels
    }

    fn outputs(&self, inputs: &[Tensor]) -> Result<Vec<[f64; 2]>> {
        Ok(self.predict_proba_batch(inputs)?)
    }
}

impl GradientModel for Model {
    fn output_gradients(&self, inputs: &[Tensor]) -> Result<Vec<([f64; 2], [Tensor; 2])>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(GRAD_CHUNK) {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::stack(chunk)?, true);
            let p = self.bind(&mut g, false);
            let (logits, _) = self.forward(&mut g, x, &p, Mode::Eval)?;
            let probs = g.softmax(logits)?;
            let s0 = g.column_sum(probs, 0)?;
            let s1 = g.column_sum(probs, 1)?;
            let g0 = g.backward(s0)?.wrt(x).unstack();
            let g1 = g.backward(s1)?.wrt(x).unstack();
            let pv = g.value(probs).data();
            for (i, (a, b)) in g0.into_iter().zip(g1).enumerate() {
                out.push(([pv[2 * i], pv[2 * i + 1]], [a, b]));
            }
        }
        Ok(out)
    }
}

/// `f_k(x) = <w_k, x> + b_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: [Tensor; 2],
    pub bias: [f64; 2],
}

impl LinearModel {
    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.weights[0].shape() {
            return Err(AttributionError::ShapeMismatch(format!(
                "input {:?} vs weights {:?}",
                x.shape(),
                self.weights[0].shape()
            )));
        }
        Ok(())
    }
}

impl ScoreModel for LinearModel {
    fn channels(&self) -> usize {
        self.weights[0].shape()[0]
    }

    fn outputs(&self, inputs: &[Tensor]) -> Result<Vec<[f64; 2]>> {
        inputs
            .iter()
            .map(|x| {
                self.check(x)?;
                let dot = |k: usize| -> f64 {
                    self.weights[k]
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
                        + self.bias[k]
                };
                Ok([dot(0), dot(1)])
            })
            .collect()
    }
}

impl GradientModel for LinearModel {
    fn output_gradients(&self, inputs: &[Tensor]) -> Result<Vec<([f64; 2], [Tensor; 2])>> {
        let outputs = self.outputs(inputs)?;
        Ok(outputs
            .into_iter()
            .map(|o| (o, [self.weights[0].clone(), self.weights[1].clone()]))
            .collect())
    }
}

/// Ignores its input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantModel {
    pub channels: usize,
    pub value: [f64; 2],
}

impl ScoreModel for ConstantModel {
    fn channels(&self) -> usize {
        self.channels
    }

    fn outputs(&self, inputs: &[Tensor]) -> Result<Vec<[f64; 2]>> {
        Ok(vec![self.value; inputs.len()])
    }
}

impl GradientModel for ConstantModel {
    fn output_gradients(&self, inputs: &[Tensor]) -> Result<Vec<([f64; 2], [Tensor; 2])>> {
        Ok(inputs
            .iter()
            .map(|x| (self.value, [Tensor::zeros(x.shape()), Tensor::zeros(x.shape())]))
            .collect())
    }
}

/// Black-box scorer from a closure.
pub struct FnModel<F> {
    pub channels: usize,
    pub f: F,
}

impl<F: Fn(&Tensor) -> [f64; 2] + Sync> ScoreModel for FnModel<F> {
    fn channels(&self) -> usize {
        self.channels
    }

    fn outputs(&self, inputs: &[Tensor]) -> Result<Vec<[f64; 2]>> {
        Ok(inputs.iter().map(&self.f).collect())
    }
}

fn check_input<M: ScoreModel + ?Sized>(model: &M, x: &Tensor) -> Result<(usize, usize)> {
    match *x.shape() {
        [c, t] if c == model.channels() => Ok((c, t)),
        [c, _] => Err(AttributionError::Model(ModelError::ChannelMismatch {
            expected: model.channels(),
            got: c,
        })),
        ref s => Err(AttributionError::ShapeMismatch(format!(
            "input must be [C][T], got {s:?}"
        ))),
    }
}

/// Masking background: per-cell baseline mean, or zeros without baselines.
pub fn background_for(x: &Tensor, baselines: Option<&BaselineSet>) -> Result<Tensor> {
    match baselines {
        Some(b) if b.shape() != x.shape() => Err(AttributionError::ShapeMismatch(format!(
            "baseline {:?} vs input {:?}",
            b.shape(),
            x.shape()
        ))),
        Some(b) => Ok(b.mean()),
        None => Ok(Tensor::zeros(x.shape())),
    }
}

/// Runs one method for both classes and packages the result.
pub fn attribute<M: GradientModel>(
    model: &M,
    case_id: &str,
    x: &Tensor,
    params: &MethodParams,
    baselines: Option<&BaselineSet>,
    seed: u64,
) -> Result<ClassAttribution> {
    let slices = match params {
        MethodParams::Ig(p) => {
            let baseline = match p.baseline {
                IgBaseline::Zeros => Tensor::zeros(x.shape()),
                IgBaseline::Mean => background_for(x, Some(baselines.ok_or(AttributionError::EmptyBaselineSet)?))?,
            };
            integrated_gradients(model, x, &baseline, p, seed)?
        }
        MethodParams::GradShap(p) => {
            gradient_shap(model, x, baselines.ok_or(AttributionError::EmptyBaselineSet)?, p, seed)?
        }
        MethodParams::KernelShap(p) => kernel_shap(model, x, &background_for(x, baselines)?, p, seed)?,
        MethodParams::Lime(p) => lime_explain(model, x, &background_for(x, baselines)?, p, seed)?,
    };
    ClassAttribution::from_slices(case_id, params.clone(), slices)
}

#[cfg(test)]
mod tests;
