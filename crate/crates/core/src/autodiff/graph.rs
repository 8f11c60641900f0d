use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ConvDims};
use super::{AutodiffError, Result, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Convolution boundary handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    None,
    /// Repeat the edge sample `p` times on both sides.
    Replication(usize),
}

impl Padding {
    fn amount(self) -> usize {
        match self {
            Padding::None => 0,
            Padding::Replication(p) => p,
        }
    }
}

/// Per-channel statistics of a training-mode batch norm call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance (divides by `m - 1`), as used for running estimates.
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Tanh(Var),
    Conv1d {
        input: Var,
        kernel: Var,
        dims: ConvDims,
        pad: usize,
        t_in: usize,
        padded: Vec<f64>,
    },
    ChannelBias {
        input: Var,
        bias: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    GlobalAvgPool(Var),
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Softmax(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    ColumnSum {
        input: Var,
        column: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so parents
/// always precede children and the tape is acyclic by construction.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when `var` does not influence the output.
    pub fn wrt(&self, var: Var) -> Tensor {
        match self.grads.get(var.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

/// Splits a `[C][T]` or `[N][C][T]` shape into `(n, c, t, batched)`.
fn split_nct(shape: &[usize], op: &str) -> Result<(usize, usize, usize, bool)> {
    match *shape {
        [c, t] => Ok((1, c, t, false)),
        [n, c, t] => Ok((n, c, t, true)),
        _ => Err(AutodiffError::ShapeMismatch(format!(
            "{op} expects [C][T] or [N][C][T], got {shape:?}"
        ))),
    }
}

/// Splits a `[F]` or `[N][F]` shape into `(n, f, batched)`.
fn split_nf(shape: &[usize], op: &str) -> Result<(usize, usize, bool)> {
    match *shape {
        [f] => Ok((1, f, false)),
        [n, f] => Ok((n, f, true)),
        _ => Err(AutodiffError::ShapeMismatch(format!(
            "{op} expects [F] or [N][F], got {shape:?}"
        ))),
    }
}

fn softmax_rows(x: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Leaf node. `requires_grad` marks trainable parameters and inputs whose
    /// gradient is requested (attribution).
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var], name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite(name.to_string()));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(value, Op::Add(a, b), &[a, b], "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(value, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor), &[a], "scale")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a], "sum")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a), &[a], "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a), &[a], "tanh")
    }

    /// 1D cross-correlation (no kernel flip).
    ///
    /// `input` is `[C_in][T]` or `[N][C_in][T]`, `kernel` is `[C_out][C_in][K]`;
    /// the output length is `floor((T + 2p - K) / stride) + 1`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        if stride == 0 {
            return Err(AutodiffError::InvalidArgument("stride must be >= 1".into()));
        }
        let (n, c_in, t, batched) = split_nct(self.value(input).shape(), "conv1d")?;
        let (c_out, kc_in, k) = match *self.value(kernel).shape() {
            [o, c, k] => (o, c, k),
            ref s => {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "conv1d kernel must be [C_out][C_in][K], got {s:?}"
                )))
            }
        };
        if kc_in != c_in {
            return Err(AutodiffError::ShapeMismatch(format!(
                "conv1d kernel expects {kc_in} input channels, input has {c_in}"
            )));
        }
        let pad = padding.amount();
        if pad > 0 && t == 0 {
            return Err(AutodiffError::ShapeMismatch("cannot pad an empty series".into()));
        }
        let t_pad = t + 2 * pad;
        if k == 0 || k > t_pad {
            return Err(AutodiffError::ShapeMismatch(format!(
                "kernel length {k} exceeds padded length {t_pad}"
            )));
        }
        let t_out = (t_pad - k) / stride + 1;
        let dims = ConvDims {
            n,
            c_in,
            c_out,
            k,
            stride,
            t_pad,
            t_out,
        };
        let padded = kernels::replicate_pad(self.value(input).data(), n * c_in, t, pad);
        let out = kernels::conv_forward(&padded, self.value(kernel).data(), dims);
        let shape = if batched {
            vec![n, c_out, t_out]
        } else {
            vec![c_out, t_out]
        };
        let value = Tensor::new(shape, out)?;
        self.push(
            value,
            Op::Conv1d {
                input,
                kernel,
                dims,
                pad,
                t_in: t,
                padded,
            },
            &[input, kernel],
            "conv1d",
        )
    }

    /// Adds a per-channel bias `[C]` to a `[C][T]` / `[N][C][T]` input.
    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (_, c, t, _) = split_nct(self.value(input).shape(), "channel_bias")?;
        if self.value(bias).shape() != [c] {
            return Err(AutodiffError::ShapeMismatch(format!(
                "bias {:?} for {c} channels",
                self.value(bias).shape()
            )));
        }
        let b = self.value(bias).data().to_vec();
        let mut value = self.value(input).clone();
        for (i, row) in value.data_mut().chunks_exact_mut(t.max(1)).enumerate() {
            let bc = b[i % c];
            row.iter_mut().for_each(|v| *v += bc);
        }
        self.push(value, Op::ChannelBias { input, bias }, &[input, bias], "channel_bias")
    }

    fn check_affine(&self, gamma: Var, beta: Var, c: usize) -> Result<()> {
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(AutodiffError::ShapeMismatch(format!(
                "batch_norm affine parameters must be [{c}]"
            )));
        }
        Ok(())
    }

    /// Channelwise batch norm using the statistics of the current batch
    /// (over the `N` and `T` axes).
    pub fn batch_norm_train(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (n, c, t, _) = split_nct(self.value(input).shape(), "batch_norm")?;
        self.check_affine(gamma, beta, c)?;
        let m = n * t;
        if m == 0 {
            return Err(AutodiffError::ShapeMismatch("batch_norm over an empty batch".into()));
        }
        let x = self.value(input).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ni in 0..n {
            for ci in 0..c {
                mean[ci] += x[(ni * c + ci) * t..][..t].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        for ni in 0..n {
            for ci in 0..c {
                var[ci] += x[(ni * c + ci) * t..][..t]
                    .iter()
                    .map(|v| (v - mean[ci]).powi(2))
                    .sum::<f64>();
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / m as f64).collect();
        let unbiased: Vec<f64> = var
            .iter()
            .map(|v| if m > 1 { v / (m - 1) as f64 } else { 0.0 })
            .collect();
        let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (value, xhat) = self.normalize(input, gamma, beta, &mean, &inv_std, n, c, t)?;
        let var_out = self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train: true,
            },
            &[input, gamma, beta],
            "batch_norm",
        )?;
        Ok((var_out, BatchStats { mean, var: unbiased }))
    }

    /// Batch norm with frozen running statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (n, c, t, _) = split_nct(self.value(input).shape(), "batch_norm")?;
        self.check_affine(gamma, beta, c)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(AutodiffError::ShapeMismatch("running statistics length".into()));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (value, xhat) = self.normalize(input, gamma, beta, running_mean, &inv_std, n, c, t)?;
        self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train: false,
            },
            &[input, gamma, beta],
            "batch_norm",
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
        n: usize,
        c: usize,
        t: usize,
    ) -> Result<(Tensor, Vec<f64>)> {
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * t;
                for i in off..off + t {
                    xhat[i] = (x[i] - mean[ci]) * inv_std[ci];
                    out[i] = g[ci] * xhat[i] + b[ci];
                }
            }
        }
        Ok((Tensor::new(self.value(input).shape().to_vec(), out)?, xhat))
    }

    /// Mean over the time axis: `[C][T] -> [C]`, `[N][C][T] -> [N][C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (n, c, t, batched) = split_nct(self.value(input).shape(), "global_avg_pool")?;
        if t == 0 {
            return Err(AutodiffError::ShapeMismatch("global_avg_pool over zero steps".into()));
        }
        let data: Vec<f64> = self
            .value(input)
            .data()
            .chunks_exact(t)
            .map(|row| row.iter().sum::<f64>() / t as f64)
            .collect();
        let shape = if batched { vec![n, c] } else { vec![c] };
        self.push(
            Tensor::new(shape, data)?,
            Op::GlobalAvgPool(input),
            &[input],
            "global_avg_pool",
        )
    }

    /// Inverted dropout. The mask is drawn from a ChaCha stream keyed by
    /// `(seed, counter)`, so a training run is bit-reproducible. Identity when
    /// `train` is false or `rate` is zero.
    pub fn dropout(&mut self, input: Var, rate: f64, train: bool, seed: u64, counter: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::InvalidArgument(format!(
                "dropout rate {rate} not in [0,1)"
            )));
        }
        if !train || rate == 0.0 {
            return Ok(input);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(counter);
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(input).len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let value = Tensor::new(
            self.value(input).shape().to_vec(),
            self.value(input).data().iter().zip(&mask).map(|(x, m)| x * m).collect(),
        )?;
        self.push(value, Op::Dropout { input, mask }, &[input], "dropout")
    }

    /// `y = x W^T + b` with `W: [O][F]`, `b: [O]`, `x: [F]` or `[N][F]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, f, batched) = split_nf(self.value(input).shape(), "dense")?;
        let o = match *self.value(weight).shape() {
            [o, wf] if wf == f => o,
            ref s => {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "dense weight {s:?} for {f} input features"
                )))
            }
        };
        if self.value(bias).shape() != [o] {
            return Err(AutodiffError::ShapeMismatch(format!("dense bias must be [{o}]")));
        }
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; n * o];
        for ni in 0..n {
            let xr = &x[ni * f..][..f];
            for oi in 0..o {
                out[ni * o + oi] = b[oi] + w[oi * f..][..f].iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let shape = if batched { vec![n, o] } else { vec![o] };
        self.push(
            Tensor::new(shape, out)?,
            Op::Dense { input, weight, bias },
            &[input, weight, bias],
            "dense",
        )
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let (_, k, _) = split_nf(self.value(input).shape(), "softmax")?;
        let probs = softmax_rows(self.value(input).data(), k);
        let value = Tensor::new(self.value(input).shape().to_vec(), probs)?;
        self.push(value, Op::Softmax(input), &[input], "softmax")
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k, _) = split_nf(self.value(logits).shape(), "softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(AutodiffError::ShapeMismatch(format!(
                "{} labels for {n} rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(AutodiffError::InvalidArgument(format!("label {bad} >= {k} classes")));
        }
        let x = self.value(logits).data();
        let probs = softmax_rows(x, k);
        let mut loss = 0.0;
        for (row, &label) in x.chunks_exact(k).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
        }
        loss /= n as f64;
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
            "softmax_cross_entropy",
        )
    }

    /// Scalar `sum_n x[n][column]`; the batched attribution objective.
    pub fn column_sum(&mut self, input: Var, column: usize) -> Result<Var> {
        let (_, k, _) = split_nf(self.value(input).shape(), "column_sum")?;
        if column >= k {
            return Err(AutodiffError::InvalidArgument(format!("column {column} >= {k}")));
        }
        let s: f64 = self.value(input).data().iter().skip(column).step_by(k).sum();
        self.push(
            Tensor::scalar(s),
            Op::ColumnSum { input, column },
            &[input],
            "column_sum",
        )
    }

    /// Reverse sweep from a scalar `output`. Leaves without `requires_grad`
    /// (and nodes not upstream of `output`) get zero gradient.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_node = &self.nodes[output.0];
        if out_node.value.len() != 1 {
            return Err(AutodiffError::NotScalar(out_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(out_node.value.shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(self.nodes.len(), None);
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn propagate(&self, op: &Op, value: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.zip_map(vb, |x, y| x * y)?);
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.zip_map(va, |x, y| x * y)?);
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.map(|x| x * f)),
            Op::Sum(a) => {
                let gv = g.data()[0];
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = g.zip_map(value, |gv, y| gv * (1.0 - y * y))?;
                self.accumulate(grads, *a, ga);
            }
            Op::Conv1d {
                input,
                kernel,
                dims,
                pad,
                t_in,
                padded,
            } => {
                if self.wants(*input) {
                    let gxp = kernels::conv_backward_input(g.data(), self.value(*kernel).data(), *dims);
                    let gx = kernels::fold_pad_grad(&gxp, dims.n * dims.c_in, *t_in, *pad);
                    self.accumulate(grads, *input, Tensor::new(self.value(*input).shape().to_vec(), gx)?);
                }
                if self.wants(*kernel) {
                    let gw = kernels::conv_backward_kernel(g.data(), padded, *dims);
                    self.accumulate(grads, *kernel, Tensor::new(self.value(*kernel).shape().to_vec(), gw)?);
                }
            }
            Op::ChannelBias { input, bias } => {
                let (_, c, t, _) = split_nct(g.shape(), "channel_bias")?;
                if self.wants(*bias) {
                    let mut gb = vec![0.0; c];
                    for (i, row) in g.data().chunks_exact(t.max(1)).enumerate() {
                        gb[i % c] += row.iter().sum::<f64>();
                    }
                    self.accumulate(grads, *bias, Tensor::from_vec(gb));
                }
                self.accumulate(grads, *input, g.clone());
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (n, c, t, _) = split_nct(g.shape(), "batch_norm")?;
                let gd = g.data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let off = (ni * c + ci) * t;
                        for i in off..off + t {
                            sum_g[ci] += gd[i];
                            sum_gx[ci] += gd[i] * xhat[i];
                        }
                    }
                }
                let gam = self.value(*gamma).data();
                if self.wants(*input) {
                    let m = (n * t) as f64;
                    let mut gx = vec![0.0; gd.len()];
                    for ni in 0..n {
                        for ci in 0..c {
                            let off = (ni * c + ci) * t;
                            let s = gam[ci] * inv_std[ci];
                            for i in off..off + t {
                                gx[i] = if *train {
                                    s / m * (m * gd[i] - sum_g[ci] - xhat[i] * sum_gx[ci])
                                } else {
                                    s * gd[i]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *input, Tensor::new(g.shape().to_vec(), gx)?);
                }
                self.accumulate(grads, *gamma, Tensor::from_vec(sum_gx));
                self.accumulate(grads, *beta, Tensor::from_vec(sum_g));
            }
            Op::GlobalAvgPool(a) => {
                let (_, _, t, _) = split_nct(self.value(*a).shape(), "global_avg_pool")?;
                let mut ga = Vec::with_capacity(self.value(*a).len());
                for &gv in g.data() {
                    ga.extend(std::iter::repeat_n(gv / t as f64, t));
                }
                self.accumulate(grads, *a, Tensor::new(self.value(*a).shape().to_vec(), ga)?);
            }
            Op::Dropout { input, mask } => {
                let ga: Vec<f64> = g.data().iter().zip(mask).map(|(a, b)| a * b).collect();
                self.accumulate(grads, *input, Tensor::new(g.shape().to_vec(), ga)?);
            }
            Op::Dense { input, weight, bias } => {
                let (n, f, _) = split_nf(self.value(*input).shape(), "dense")?;
                let o = self.value(*bias).len();
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                let gd = g.data();
                if self.wants(*input) {
                    let mut gx = vec![0.0; n * f];
                    for ni in 0..n {
                        for oi in 0..o {
                            let gv = gd[ni * o + oi];
                            for (dst, &wv) in gx[ni * f..][..f].iter_mut().zip(&w[oi * f..][..f]) {
                                *dst += gv * wv;
                            }
                        }
                    }
                    self.accumulate(grads, *input, Tensor::new(self.value(*input).shape().to_vec(), gx)?);
                }
                if self.wants(*weight) {
                    let mut gw = vec![0.0; o * f];
                    for ni in 0..n {
                        for oi in 0..o {
                            let gv = gd[ni * o + oi];
                            for (dst, &xv) in gw[oi * f..][..f].iter_mut().zip(&x[ni * f..][..f]) {
                                *dst += gv * xv;
                            }
                        }
                    }
                    self.accumulate(grads, *weight, Tensor::new(vec![o, f], gw)?);
                }
                if self.wants(*bias) {
                    let mut gb = vec![0.0; o];
                    for row in gd.chunks_exact(o) {
                        for (dst, v) in gb.iter_mut().zip(row) {
                            *dst += v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::from_vec(gb));
                }
            }
            Op::Softmax(a) => {
                let (_, k, _) = split_nf(value.shape(), "softmax")?;
                let mut ga = vec![0.0; value.len()];
                for ((p, gr), dst) in value
                    .data()
                    .chunks_exact(k)
                    .zip(g.data().chunks_exact(k))
                    .zip(ga.chunks_exact_mut(k))
                {
                    let dot: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for i in 0..k {
                        dst[i] = p[i] * (gr[i] - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(value.shape().to_vec(), ga)?);
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let shape = self.value(*logits).shape().to_vec();
                let (n, k, _) = split_nf(&shape, "softmax_cross_entropy")?;
                let scale = g.data()[0] / n as f64;
                let mut gl = probs.clone();
                for (row, &label) in gl.chunks_exact_mut(k).zip(labels) {
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                self.accumulate(grads, *logits, Tensor::new(shape, gl)?);
            }
            Op::ColumnSum { input, column } => {
                let shape = self.value(*input).shape().to_vec();
                let (_, k, _) = split_nf(&shape, "column_sum")?;
                let mut ga = vec![0.0; self.value(*input).len()];
                for row in ga.chunks_exact_mut(k) {
                    row[*column] = g.data()[0];
                }
                self.accumulate(grads, *input, Tensor::new(shape, ga)?);
            }
        }
        Ok(())
    }
}
