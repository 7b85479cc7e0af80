//! Starting-weight regimes: cold (Glorot), warm (checkpoint copy),
//! shrink-and-perturb, and a surrogate pretrained source.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{split_group_level, Cohort};
use crate::error::{invalid, Result};
use crate::nn::{train, Checkpoint, NetworkSpec, TrainConfig};
use crate::tensor::{LayerWeights, TensorF, WeightSet};

/// Noise scale used when perturbing shrunk weights.
pub const DEFAULT_BETA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkParams {
    pub alpha: f64,
    pub beta_scale: f64,
    pub noise_seed: u64,
}

impl ShrinkParams {
    pub fn new(alpha: f64, beta_scale: f64, noise_seed: u64) -> Result<Self> {
        let p = Self { alpha, beta_scale, noise_seed };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return invalid(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if !(self.beta_scale >= 0.0 && self.beta_scale.is_finite()) {
            return invalid(format!("beta_scale {} must be non-negative", self.beta_scale));
        }
        Ok(())
    }
}

/// Glorot-uniform kernels, zero biases.
pub fn cold_init(spec: &NetworkSpec, seed: u64) -> Result<WeightSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (layer_index, kshape, bshape) in spec.param_shapes()? {
        let (fan_in, fan_out) = match kshape.len() {
            4 => {
                let field = kshape[2] * kshape[3];
                (kshape[1] * field, kshape[0] * field)
            }
            _ => (kshape[1], kshape[0]),
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let n: usize = kshape.iter().product();
        let values = (0..n).map(|_| dist.sample(&mut rng)).collect();
        entries.push(LayerWeights {
            layer_index,
            kernel: TensorF { shape: kshape, values },
            bias: TensorF::zeros(bshape),
        });
    }
    Ok(WeightSet::new(entries))
}

/// Weights after training from a cold start on a related pretext cohort.
pub fn pretrain_surrogate(spec: &NetworkSpec, pretext: &Cohort, config: &TrainConfig) -> Result<WeightSet> {
    let split = split_group_level(pretext)?;
    let init = cold_init(spec, config.rng_seed)?;
    let result = train(spec, &init, &pretext.dataset(&split.train), &pretext.dataset(&split.val), config)?;
    Ok(result.best.weights)
}

pub fn warm_init(spec: &NetworkSpec, checkpoint: &Checkpoint) -> Result<WeightSet> {
    spec.check_weights(&checkpoint.weights)?;
    Ok(checkpoint.weights.clone())
}

/// `w' = alpha * w + n` with `n ~ Normal(0, beta_scale^2)` drawn in parameter order.
pub fn shrink_perturb(weights: &WeightSet, params: &ShrinkParams) -> Result<WeightSet> {
    params.validate()?;
    let mut out = weights.clone();
    if params.beta_scale == 0.0 {
        out.params_mut().for_each(|w| *w *= params.alpha);
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.noise_seed);
    let noise = Normal::new(0.0, params.beta_scale).expect("positive std");
    for w in out.params_mut() {
        *w = params.alpha * *w + noise.sample(&mut rng);
    }
    Ok(out)
}
