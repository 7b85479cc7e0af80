use crate::error::Result;
use crate::tensor::WeightSet;

use super::TrainConfig;

/// First/second moment accumulators and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: WeightSet,
    pub v: WeightSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(weights: &WeightSet) -> Self {
        Self { m: weights.zeros_like(), v: weights.zeros_like(), t: 0 }
    }
}

/// One bias-corrected Adam update, applied in place.
pub fn adam_step(
    weights: &mut WeightSet,
    grads: &WeightSet,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    weights.check_same_shape(grads)?;
    weights.check_same_shape(&state.m)?;
    weights.check_same_shape(&state.v)?;
    state.t += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    let params = weights.params_mut();
    let moments = state.m.params_mut().zip(state.v.params_mut());
    for ((w, g), (m, v)) in params.zip(grads.params()).zip(moments) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_epsilon);
    }
    Ok(())
}
