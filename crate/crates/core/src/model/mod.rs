//! One-dimensional residual classifier shared by both modalities.
//!
//! Layout: strided convolutional stem, residual blocks with replication
//! padding, global average pooling, dropout and a dense head. There are no
//! pooling layers besides the final global average, so downsampling happens
//! only through strided convolutions and the network accepts any input length
//! at or above [`ModelConfig::min_length`].

mod metrics;
mod search;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, BatchStats, Checkpoint, Graph, Padding, Tensor, Var};
use crate::signal::{CineTrajectory, EcgRecord, Label, NUM_LEADS, NUM_SPATIAL_DIMS};

pub use metrics::{classification_metrics, evaluate, EvalReport};
pub use search::{random_search, SearchReport, SearchSpace, Trial};
pub use train::{train, train_and_evaluate, EpochLog, TrainConfig, TrainOutcome, TrainReport};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("model expects {expected} channels, input has {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("input of {got} samples is shorter than the minimum {min}")]
    InputTooShort { min: usize, got: usize },
    #[error("training data must contain both classes")]
    SingleClassData,
    #[error("empty data set")]
    EmptySet,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Input modality. Determines the channel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Ecg,
    Cine,
}

impl Modality {
    pub fn channels(self) -> usize {
        match self {
            Modality::Ecg => NUM_LEADS,
            Modality::Cine => NUM_SPATIAL_DIMS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn new(channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            channels,
            kernel,
            stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub stem: ConvSpec,
    pub blocks: Vec<ConvSpec>,
    pub dropout_rate: f64,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn for_modality(modality: Modality) -> Self {
        Self {
            in_channels: modality.channels(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.in_channels != NUM_LEADS && self.in_channels != NUM_SPATIAL_DIMS {
            return bad(format!("in_channels must be {NUM_LEADS} or {NUM_SPATIAL_DIMS}"));
        }
        if self.num_classes != NUM_CLASSES {
            return bad(format!("num_classes must be {NUM_CLASSES}"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} not in [0,1)", self.dropout_rate));
        }
        for (i, spec) in std::iter::once(&self.stem).chain(&self.blocks).enumerate() {
            if spec.kernel % 2 == 0 {
                return bad(format!("layer {i}: kernel {} must be odd", spec.kernel));
            }
            if !(1..=2).contains(&spec.stride) {
                return bad(format!("layer {i}: stride {} must be 1 or 2", spec.stride));
            }
            if spec.channels == 0 {
                return bad(format!("layer {i}: zero channels"));
            }
        }
        Ok(())
    }

    /// Shortest accepted input: the product of all strides, so the final
    /// feature map always has at least one step per downsampling stage.
    pub fn min_length(&self) -> usize {
        std::iter::once(&self.stem)
            .chain(&self.blocks)
            .map(|s| s.stride)
            .product()
    }

    pub fn feature_channels(&self) -> usize {
        self.blocks.last().unwrap_or(&self.stem).channels
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: NUM_LEADS,
            stem: ConvSpec::new(32, 7, 2),
            blocks: vec![
                ConvSpec::new(32, 5, 1),
                ConvSpec::new(64, 5, 2),
                ConvSpec::new(64, 3, 1),
            ],
            dropout_rate: 0.3,
            num_classes: NUM_CLASSES,
        }
    }
}

/// Convolution (no bias) followed by batch norm.
#[derive(Debug, Clone, PartialEq)]
struct ConvBn {
    kernel: usize,
    gamma: usize,
    beta: usize,
    stride: usize,
    pad: usize,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    conv1: ConvBn,
    conv2: ConvBn,
    shortcut: Option<ConvBn>,
}

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and active dropout drawn from `(seed, counter)`.
    Train { seed: u64, counter: u64 },
    /// Running statistics, no dropout.
    Eval,
}

/// Trainable parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Tensor>,
    names: Vec<String>,
    stem: ConvBn,
    blocks: Vec<Block>,
    dense_w: usize,
    dense_b: usize,
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    params: Vec<Tensor>,
    names: Vec<String>,
}

impl Builder<'_> {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.params.push(t);
        self.names.push(name);
        self.params.len() - 1
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches data")
    }

    fn conv_bn(&mut self, name: &str, c_in: usize, spec: ConvSpec) -> ConvBn {
        let fan_in = (c_in * spec.kernel) as f64;
        let w = self.uniform(&[spec.channels, c_in, spec.kernel], (6.0 / fan_in).sqrt());
        let c = spec.channels;
        ConvBn {
            kernel: self.push(format!("{name}.conv.weight"), w),
            gamma: self.push(format!("{name}.bn.gamma"), Tensor::full(&[c], 1.0)),
            beta: self.push(format!("{name}.bn.beta"), Tensor::zeros(&[c])),
            stride: spec.stride,
            pad: spec.kernel / 2,
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
        }
    }
}

/// Deterministic initialization: He-uniform convolutions, fan-in uniform
/// dense layer, unit/zero batch-norm affine parameters.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        rng: &mut rng,
        params: Vec::new(),
        names: Vec::new(),
    };
    let stem = b.conv_bn("stem", config.in_channels, config.stem);
    let mut c_in = config.stem.channels;
    let mut blocks = Vec::with_capacity(config.blocks.len());
    for (i, spec) in config.blocks.iter().enumerate() {
        let name = format!("block{i}");
        let conv1 = b.conv_bn(&format!("{name}.conv1"), c_in, *spec);
        let conv2 = b.conv_bn(
            &format!("{name}.conv2"),
            spec.channels,
            ConvSpec::new(spec.channels, spec.kernel, 1),
        );
        let shortcut = (c_in != spec.channels || spec.stride != 1).then(|| {
            b.conv_bn(
                &format!("{name}.shortcut"),
                c_in,
                ConvSpec::new(spec.channels, 1, spec.stride),
            )
        });
        blocks.push(Block { conv1, conv2, shortcut });
        c_in = spec.channels;
    }
    let bound = 1.0 / (c_in as f64).sqrt();
    let w = b.uniform(&[config.num_classes, c_in], bound);
    let dense_w = b.push("head.dense.weight".into(), w);
    let dense_b = b.push("head.dense.bias".into(), Tensor::zeros(&[config.num_classes]));
    Ok(Model {
        config: config.clone(),
        params: b.params,
        names: b.names,
        stem,
        blocks,
        dense_w,
        dense_b,
    })
}

/// Running statistics collected in train mode, in layer order.
pub type LayerStats = Vec<BatchStats>;

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.params[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn conv_bns(&self) -> Vec<&ConvBn> {
        let mut out = vec![&self.stem];
        for b in &self.blocks {
            out.push(&b.conv1);
            out.push(&b.conv2);
            out.extend(b.shortcut.as_ref());
        }
        out
    }

    fn conv_bns_mut(&mut self) -> Vec<&mut ConvBn> {
        let mut out = vec![&mut self.stem];
        for b in &mut self.blocks {
            out.push(&mut b.conv1);
            out.push(&mut b.conv2);
            out.extend(b.shortcut.as_mut());
        }
        out
    }

    /// Checks channels and length of a `[C][T]` or `[N][C][T]` input.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let (c, t) = match *shape {
            [c, t] | [_, c, t] => (c, t),
            _ => {
                return Err(ModelError::Autodiff(AutodiffError::ShapeMismatch(format!(
                    "model input must be [C][T] or [N][C][T], got {shape:?}"
                ))))
            }
        };
        if c != self.config.in_channels {
            return Err(ModelError::ChannelMismatch {
                expected: self.config.in_channels,
                got: c,
            });
        }
        let min = self.config.min_length();
        if t < min {
            return Err(ModelError::InputTooShort { min, got: t });
        }
        Ok(())
    }

    /// Adds the parameters to `g`: trainable leaves when `trainable`, constants otherwise.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect()
    }

    fn conv_bn_forward(
        &self,
        g: &mut Graph,
        x: Var,
        layer: &ConvBn,
        p: &[Var],
        mode: Mode,
        stats: &mut LayerStats,
    ) -> Result<Var> {
        let y = g.conv1d(x, p[layer.kernel], layer.stride, Padding::Replication(layer.pad))?;
        Ok(match mode {
            Mode::Train { .. } => {
                let (out, s) = g.batch_norm_train(y, p[layer.gamma], p[layer.beta], BN_EPS)?;
                stats.push(s);
                out
            }
            Mode::Eval => g.batch_norm_eval(
                y,
                p[layer.gamma],
                p[layer.beta],
                &layer.running_mean,
                &layer.running_var,
                BN_EPS,
            )?,
        })
    }

    /// Logits `[N][2]` (or `[2]` for an unbatched input) for `input`, using
    /// parameter handles from [`Model::bind`]. Train mode also returns the
    /// batch statistics of every batch-norm layer.
    pub fn forward(&self, g: &mut Graph, input: Var, params: &[Var], mode: Mode) -> Result<(Var, LayerStats)> {
        self.check_input(g.value(input).shape())?;
        let mut stats = Vec::new();
        let mut x = self.conv_bn_forward(g, input, &self.stem, params, mode, &mut stats)?;
        x = g.relu(x)?;
        for block in &self.blocks {
            let mut h = self.conv_bn_forward(g, x, &block.conv1, params, mode, &mut stats)?;
            h = g.relu(h)?;
            h = self.conv_bn_forward(g, h, &block.conv2, params, mode, &mut stats)?;
            let skip = match &block.shortcut {
                Some(s) => self.conv_bn_forward(g, x, s, params, mode, &mut stats)?,
                None => x,
            };
            let sum = g.add(h, skip)?;
            x = g.relu(sum)?;
        }
        let pooled = g.global_avg_pool(x)?;
        let dropped = match mode {
            Mode::Train { seed, counter } => g.dropout(pooled, self.config.dropout_rate, true, seed, counter)?,
            Mode::Eval => pooled,
        };
        let logits = g.dense(dropped, params[self.dense_w], params[self.dense_b])?;
        Ok((logits, stats))
    }

    /// Exponential moving update of the running statistics.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        for (layer, s) in self.conv_bns_mut().into_iter().zip(stats) {
            for (r, m) in layer.running_mean.iter_mut().zip(&s.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            for (r, v) in layer.running_var.iter_mut().zip(&s.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
        }
    }

    /// Eval-mode logits for a batch of `[C][T]` inputs of equal length.
    pub fn logits_batch(&self, inputs: &[Tensor]) -> Result<Vec<[f64; 2]>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let stacked = Tensor::stack(inputs)?;
        let mut g = Graph::new();
        let x = g.constant(stacked);
        let p = self.bind(&mut g, false);
        let (logits, _) = self.forward(&mut g, x, &p, Mode::Eval)?;
        Ok(g.value(logits).data().chunks_exact(2).map(|r| [r[0], r[1]]).collect())
    }

    /// Softmax probabilities `(p_normal, p_abnormal)` in eval mode.
    pub fn predict_proba(&self, input: &Tensor) -> Result<[f64; 2]> {
        Ok(self.predict_proba_batch(std::slice::from_ref(input))?[0])
    }

    /// Batched [`Model::predict_proba`]; inputs are processed in chunks of
    /// equal-length series. Results do not depend on the chunking.
    pub fn predict_proba_batch(&self, inputs: &[Tensor]) -> Result<Vec<[f64; 2]>> {
        const CHUNK: usize = 32;
        let mut out = Vec::with_capacity(inputs.len());
        let mut start = 0;
        while start < inputs.len() {
            let shape = inputs[start].shape();
            let mut end = start + 1;
            while end < inputs.len() && end - start < CHUNK && inputs[end].shape() == shape {
                end += 1;
            }
            for l in self.logits_batch(&inputs[start..end])? {
                out.push(softmax2(l));
            }
            start = end;
        }
        Ok(out)
    }

    pub fn predict_label(&self, input: &Tensor) -> Result<Label> {
        let p = self.predict_proba(input)?;
        Ok(if p[1] > p[0] { Label::Abnormal } else { Label::Normal })
    }

    /// Parameters and running statistics as a named checkpoint.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(serde_json::json!({ "model_config": self.config }));
        for (name, t) in self.names.iter().zip(&self.params) {
            ck.push(name, t);
        }
        for (i, layer) in self.conv_bns().into_iter().enumerate() {
            ck.push(
                format!("bn{i}.running_mean"),
                &Tensor::from_vec(layer.running_mean.clone()),
            );
            ck.push(
                format!("bn{i}.running_var"),
                &Tensor::from_vec(layer.running_var.clone()),
            );
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(ck.metadata["model_config"].clone())
            .map_err(|e| ModelError::Checkpoint(format!("model_config: {e}")))?;
        let mut model = build_model(&config, 0)?;
        for i in 0..model.params.len() {
            let t = ck.tensor(&model.names[i])?;
            if t.shape() != model.params[i].shape() {
                return Err(ModelError::Checkpoint(format!(
                    "{}: shape {:?}, expected {:?}",
                    model.names[i],
                    t.shape(),
                    model.params[i].shape()
                )));
            }
            model.params[i] = t;
        }
        for (i, layer) in model.conv_bns_mut().into_iter().enumerate() {
            let mean = ck.tensor(&format!("bn{i}.running_mean"))?.into_data();
            let var = ck.tensor(&format!("bn{i}.running_var"))?.into_data();
            if mean.len() != layer.running_mean.len() || var.len() != layer.running_var.len() {
                return Err(ModelError::Checkpoint(format!("bn{i}: running statistics length")));
            }
            layer.running_mean = mean;
            layer.running_var = var;
        }
        Ok(model)
    }
}

fn softmax2(l: [f64; 2]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    let e0 = (l[0] - m).exp();
    let e1 = (l[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Labeled model input `[C][T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub label: Label,
}

impl Sample {
    pub fn new(input: Tensor, label: Label) -> Self {
        Self { input, label }
    }

    pub fn from_record(record: &EcgRecord) -> Self {
        Self::new(record.to_tensor(), record.label)
    }

    pub fn from_cine(cine: &CineTrajectory, label: Label) -> Self {
        Self::new(cine.to_tensor(), label)
    }
}
