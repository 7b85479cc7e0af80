use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::stats::optimal_threshold;
use crate::tensor::WeightSet;

use super::{adam_step, AdamState, Network, NetworkSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub rng_seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 64,
            max_epochs: 20,
            patience: 4,
            rng_seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return invalid("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return invalid("batch_size and max_epochs must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub weights: WeightSet,
    pub val_loss: f64,
    pub epoch: usize,
    /// F-maximizing threshold on the validation split.
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResult {
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// Wall-clock duration; excluded from equality since it depends on the host.
    pub wall_seconds: f64,
    pub epochs_to_best: usize,
}

impl PartialEq for TrainResult {
    fn eq(&self, other: &Self) -> bool {
        self.best == other.best
            && self.history == other.history
            && self.epochs_to_best == other.epochs_to_best
    }
}

impl TrainResult {
    /// First epoch (1-based) whose validation loss is at or below `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.history.iter().position(|r| r.val_loss <= target).map(|i| i + 1)
    }
}

/// Something trainable by mini-batch Adam on a [`Dataset`].
pub trait Objective {
    /// Mean loss over `idx`, accumulating gradients into zeroed `grads`.
    fn batch_loss_grad(&self, weights: &WeightSet, data: &Dataset, idx: &[usize], grads: &mut WeightSet) -> f64;
    fn mean_loss(&self, weights: &WeightSet, data: &Dataset) -> f64;
    fn positive_scores(&self, weights: &WeightSet, data: &Dataset) -> Vec<f64>;
}

impl Objective for Network {
    fn batch_loss_grad(&self, weights: &WeightSet, data: &Dataset, idx: &[usize], grads: &mut WeightSet) -> f64 {
        Network::batch_loss_grad(self, weights, data, idx, grads)
    }

    fn mean_loss(&self, weights: &WeightSet, data: &Dataset) -> f64 {
        Network::mean_loss(self, weights, data)
    }

    fn positive_scores(&self, weights: &WeightSet, data: &Dataset) -> Vec<f64> {
        Network::positive_scores(self, weights, data)
    }
}

/// Trains `spec` from `init`, keeping the checkpoint with the lowest validation loss.
pub fn train(
    spec: &NetworkSpec,
    init: &WeightSet,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainResult> {
    spec.check_weights(init)?;
    if train_set.sample_len != spec.input_len() || val_set.sample_len != spec.input_len() {
        return Err(Error::Shape(format!(
            "dataset sample length does not match network input {}",
            spec.input_len()
        )));
    }
    let net = Network::new(spec)?;
    train_with(&net, init, train_set, val_set, config)
}

pub fn train_with<O: Objective>(
    objective: &O,
    init: &WeightSet,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainResult> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return invalid("training and validation sets must be non-empty");
    }
    let started = Instant::now();
    let mut weights = init.clone();
    let mut state = AdamState::new(&weights);
    let mut grads = weights.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(WeightSet, f64, usize)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        // one permutation per epoch, derived from the seed and the epoch index
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed.wrapping_add(epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.params_mut().for_each(|g| *g = 0.0);
            let loss = objective.batch_loss_grad(&weights, train_set, batch, &mut grads);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch} (batch of {})",
                    batch.len()
                )));
            }
            loss_sum += loss * batch.len() as f64;
            adam_step(&mut weights, &grads, &mut state, config)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = objective.mean_loss(&weights, val_set);
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite validation loss at epoch {epoch} (train loss {train_loss})"
            )));
        }
        history.push(EpochRecord { train_loss, val_loss });
        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((weights.clone(), val_loss, epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let (weights, val_loss, epoch) = best.expect("at least one epoch ran");
    let scores = objective.positive_scores(&weights, val_set);
    let threshold = optimal_threshold(&scores, &val_set.labels).unwrap_or(0.5);
    Ok(TrainResult {
        best: Checkpoint { weights, val_loss, epoch, threshold },
        history,
        wall_seconds: started.elapsed().as_secs_f64(),
        epochs_to_best: epoch,
    })
}
