//! Seeded random search over a small discrete grid. Each trial trains a fresh
//! model and is scored by its best inner-validation loss.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_model, train, ModelConfig, ModelError, Result, Sample, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub learning_rate: Vec<f64>,
    pub dropout_rate: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub stem_channels: Vec<usize>,
    pub stem_kernel: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rate: vec![3e-4, 1e-3, 3e-3],
            dropout_rate: vec![0.1, 0.3, 0.5],
            batch_size: vec![16, 32],
            stem_channels: vec![16, 32],
            stem_kernel: vec![5, 7, 9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub best_val_loss: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub trials: Vec<Trial>,
    pub best: usize,
}

impl SearchReport {
    pub fn best_trial(&self) -> &Trial {
        &self.trials[self.best]
    }
}

/// Runs `n_trials` sampled configurations. Ties on validation loss go to the
/// earlier trial.
pub fn random_search(
    space: &SearchSpace,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    samples: &[Sample],
    n_trials: usize,
    seed: u64,
) -> Result<SearchReport> {
    if n_trials == 0 {
        return Err(ModelError::InvalidConfig("n_trials must be positive".into()));
    }
    let empty = |name: &str| ModelError::InvalidConfig(format!("search space {name} is empty"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(n_trials);
    for t in 0..n_trials {
        let mut model_cfg = base_model.clone();
        let mut train_cfg = base_train.clone();
        train_cfg.learning_rate = *space
            .learning_rate
            .choose(&mut rng)
            .ok_or_else(|| empty("learning_rate"))?;
        train_cfg.batch_size = *space.batch_size.choose(&mut rng).ok_or_else(|| empty("batch_size"))?;
        model_cfg.dropout_rate = *space
            .dropout_rate
            .choose(&mut rng)
            .ok_or_else(|| empty("dropout_rate"))?;
        model_cfg.stem.channels = *space
            .stem_channels
            .choose(&mut rng)
            .ok_or_else(|| empty("stem_channels"))?;
        model_cfg.stem.kernel = *space.stem_kernel.choose(&mut rng).ok_or_else(|| empty("stem_kernel"))?;
        let trial_seed = seed.wrapping_add(t as u64 + 1);
        let mut model = build_model(&model_cfg, trial_seed)?;
        let outcome = train(&mut model, samples, &train_cfg, trial_seed)?;
        trials.push(Trial {
            model: model_cfg,
            train: train_cfg,
            best_val_loss: outcome.best_val_loss,
            epochs_run: outcome.epochs_run,
        });
    }
    let best = (0..trials.len())
        .min_by(|&a, &b| {
            trials[a]
                .best_val_loss
                .total_cmp(&trials[b].best_val_loss)
                .then(a.cmp(&b))
        })
        .expect("at least one trial");
    Ok(SearchReport { trials, best })
}
