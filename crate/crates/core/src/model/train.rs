use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, Mode, Model, ModelError, Result, Sample};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Graph, Tensor};
use crate::signal::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement tolerated before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of the training set held out (per class) for early stopping.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 40,
            patience: 6,
            batch_size: 32,
            learning_rate: 1e-3,
            val_fraction: 0.15,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::InvalidConfig(
                "max_epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ModelError::InvalidConfig(format!(
                "learning_rate {}",
                self.learning_rate
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(ModelError::InvalidConfig(format!("val_fraction {}", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_val_loss: f64,
    pub test_accuracy: f64,
    pub test_macro_f1: f64,
    pub test_confusion: [[usize; 2]; 2],
    pub seed: u64,
    pub history: Vec<EpochLog>,
}

/// Per-class holdout of `fraction` (at least one case, never the whole class).
fn inner_split(samples: &[Sample], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in Label::ALL {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == class).collect();
        idx.shuffle(rng);
        let n_val = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn mean_cross_entropy(model: &Model, samples: &[Sample], idx: &[usize]) -> Result<f64> {
    let inputs: Vec<Tensor> = idx.iter().map(|&i| samples[i].input.clone()).collect();
    let mut total = 0.0;
    for (chunk, ids) in inputs.chunks(64).zip(idx.chunks(64)) {
        for (l, &i) in model.logits_batch(chunk)?.into_iter().zip(ids) {
            let m = l[0].max(l[1]);
            let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
            total += lse - l[samples[i].label.index()];
        }
    }
    Ok(total / idx.len() as f64)
}

/// Minimizes cross-entropy with Adam on mini-batches, monitoring the loss on
/// a stratified inner validation split. Training stops once more than
/// `patience` consecutive epochs fail to improve the best validation loss,
/// and the best parameters are restored.
pub fn train(model: &mut Model, samples: &[Sample], config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(ModelError::EmptySet);
    }
    for class in Label::ALL {
        if samples.iter().filter(|s| s.label == class).count() < 2 {
            return Err(ModelError::SingleClassData);
        }
    }
    let shape = samples[0].input.shape();
    if let Some(bad) = samples.iter().find(|s| s.input.shape() != shape) {
        return Err(ModelError::InvalidConfig(format!(
            "training inputs must share one shape: {shape:?} vs {:?}",
            bad.input.shape()
        )));
    }
    model.check_input(shape)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train_idx, val_idx) = inner_split(samples, config.val_fraction, &mut rng);
    let adam = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(model.params());
    let dropout_seed = seed ^ 0x5eed_d20b_0a7e_0001;
    let mut step: u64 = 0;

    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut history = Vec::new();
    let mut stale = 0usize;
    for epoch in 1..=config.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in train_idx.chunks(config.batch_size) {
            let inputs: Vec<Tensor> = batch.iter().map(|&i| samples[i].input.clone()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| samples[i].label.index()).collect();
            let mut g = Graph::new();
            let x = g.constant(Tensor::stack(&inputs)?);
            let p = model.bind(&mut g, true);
            let mode = Mode::Train {
                seed: dropout_seed,
                counter: step,
            };
            let (logits, stats) = model.forward(&mut g, x, &p, mode)?;
            let loss = g.softmax_cross_entropy(logits, &labels)?;
            loss_sum += g.value(loss).data()[0] * batch.len() as f64;
            let grads = g.backward(loss)?;
            let grad_list: Vec<Tensor> = p.iter().map(|&v| grads.wrt(v)).collect();
            adam_step(model.params_mut(), &grad_list, &mut state, &adam)?;
            model.update_running_stats(&stats);
            step += 1;
        }
        let val_loss = mean_cross_entropy(model, samples, &val_idx)?;
        let improved = val_loss < best.0;
        history.push(EpochLog {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            val_loss,
            improved,
        });
        if improved {
            best = (val_loss, epoch, model.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale > config.patience {
                break;
            }
        }
    }
    let (best_val_loss, best_epoch, best_model) = best;
    *model = best_model;
    Ok(TrainOutcome {
        epochs_run: history.len(),
        best_epoch,
        best_val_loss,
        history,
    })
}

/// [`train`] followed by evaluation on a held-out test set.
pub fn train_and_evaluate(
    model: &mut Model,
    train_set: &[Sample],
    test_set: &[Sample],
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    let outcome = train(model, train_set, config, seed)?;
    let eval = evaluate(model, test_set)?;
    Ok(TrainReport {
        epochs_run: outcome.epochs_run,
        best_val_loss: outcome.best_val_loss,
        test_accuracy: eval.accuracy,
        test_macro_f1: eval.macro_f1,
        test_confusion: eval.confusion,
        seed,
        history: outcome.history,
    })
}
