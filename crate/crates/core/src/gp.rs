//! Gaussian-process minimization of a scalar objective over a closed interval.
//!
//! Matérn-5/2 kernel with a fixed length scale; the prior mean is the mean of
//! the observed objectives. Random starts are followed by expected-improvement
//! proposals chosen on a dense grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};

/// Objective value recorded in place of a non-finite evaluation.
pub const NON_FINITE_PENALTY: f64 = 1e6;
pub const GRID_POINTS: usize = 512;
const JITTER_ESCALATIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Random,
    Ei,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Random => "random",
            Phase::Ei => "ei",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub alpha: f64,
    pub objective: f64,
    pub phase: Phase,
    /// The objective returned a non-finite value and was replaced by the penalty.
    pub penalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BOConfig {
    pub lower: f64,
    pub upper: f64,
    pub n_calls: usize,
    pub n_random_starts: usize,
    pub seed: u64,
    pub kernel_length_scale: f64,
    pub noise_variance: f64,
}

impl Default for BOConfig {
    fn default() -> Self {
        Self {
            lower: 0.1,
            upper: 0.9,
            n_calls: 100,
            n_random_starts: 30,
            seed: 0,
            kernel_length_scale: 0.2,
            noise_variance: 1e-6,
        }
    }
}

impl BOConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lower < self.upper) || !self.lower.is_finite() || !self.upper.is_finite() {
            return invalid(format!("bounds [{}, {}] are not an interval", self.lower, self.upper));
        }
        if self.n_random_starts == 0 || self.n_random_starts > self.n_calls {
            return invalid("need 1 <= n_random_starts <= n_calls");
        }
        if !(self.kernel_length_scale > 0.0) || !(self.noise_variance >= 0.0) {
            return invalid("kernel length scale must be positive and noise non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GPState {
    pub observations: Vec<Observation>,
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

pub fn matern52(r: f64, length_scale: f64, signal_variance: f64) -> f64 {
    let s = 5.0_f64.sqrt() * r.abs() / length_scale;
    signal_variance * (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Lower-triangular Cholesky factor, or `None` if not positive definite.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn forward_sub(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

fn backward_sub(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// A conditioned GP ready for repeated posterior queries.
#[derive(Debug, Clone)]
pub struct FittedGp {
    xs: Vec<f64>,
    chol: Vec<f64>,
    weights: Vec<f64>,
    prior_mean: f64,
    length_scale: f64,
    signal_variance: f64,
}

impl FittedGp {
    pub fn fit(state: &GPState) -> Result<Self> {
        let n = state.observations.len();
        if n == 0 {
            return invalid("GP posterior needs at least one observation");
        }
        let xs: Vec<f64> = state.observations.iter().map(|o| o.alpha).collect();
        let ys: Vec<f64> = state.observations.iter().map(|o| o.objective).collect();
        let prior_mean = ys.iter().sum::<f64>() / n as f64;
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = matern52(xs[i] - xs[j], state.length_scale, state.signal_variance);
            }
        }
        let mut jitter = state.noise_variance;
        let mut escalations = 0;
        let chol = loop {
            let mut kj = k.clone();
            for i in 0..n {
                kj[i * n + i] += jitter;
            }
            if let Some(l) = cholesky(&kj, n) {
                break l;
            }
            if escalations == JITTER_ESCALATIONS {
                return Err(Error::Numeric(format!(
                    "GP covariance singular after {JITTER_ESCALATIONS} jitter escalations (last {jitter:e})"
                )));
            }
            escalations += 1;
            jitter = (jitter * 100.0).max(1e-10 * state.signal_variance.max(1e-300));
        };
        let centered: Vec<f64> = ys.iter().map(|y| y - prior_mean).collect();
        let weights = backward_sub(&chol, n, &forward_sub(&chol, n, &centered));
        Ok(Self {
            xs,
            chol,
            weights,
            prior_mean,
            length_scale: state.length_scale,
            signal_variance: state.signal_variance,
        })
    }

    pub fn posterior(&self, alpha: f64) -> (f64, f64) {
        let n = self.xs.len();
        let kstar: Vec<f64> = self
            .xs
            .iter()
            .map(|&x| matern52(alpha - x, self.length_scale, self.signal_variance))
            .collect();
        let mean = self.prior_mean + kstar.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>();
        let v = forward_sub(&self.chol, n, &kstar);
        let var = self.signal_variance - v.iter().map(|x| x * x).sum::<f64>();
        (mean, var.max(0.0))
    }
}

pub fn gp_posterior(state: &GPState, alpha: f64) -> Result<(f64, f64)> {
    Ok(FittedGp::fit(state)?.posterior(alpha))
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement (for minimization) of a Gaussian belief over `best_observed`.
pub fn expected_improvement_from(mean: f64, variance: f64, best_observed: f64) -> f64 {
    let sd = variance.max(0.0).sqrt();
    let gain = best_observed - mean;
    if sd < 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / sd;
    (gain * std_normal_cdf(z) + sd * std_normal_pdf(z)).max(0.0)
}

pub fn expected_improvement(state: &GPState, alpha: f64, best_observed: f64) -> Result<f64> {
    let (m, v) = gp_posterior(state, alpha)?;
    Ok(expected_improvement_from(m, v, best_observed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeResult {
    pub best_alpha: f64,
    pub best_value: f64,
    pub trace: Vec<Observation>,
}

/// Runs exactly `n_calls` evaluations and returns the incumbent minimum.
pub fn minimize<F: FnMut(f64) -> f64>(mut objective: F, config: &BOConfig) -> Result<MinimizeResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace: Vec<Observation> = Vec::with_capacity(config.n_calls);
    let mut evaluate = |alpha: f64, phase: Phase, trace: &mut Vec<Observation>| {
        let v = objective(alpha);
        let (objective, penalized) = if v.is_finite() { (v, false) } else { (NON_FINITE_PENALTY, true) };
        trace.push(Observation { alpha, objective, phase, penalized });
    };

    for _ in 0..config.n_random_starts {
        let a = rng.random_range(config.lower..=config.upper);
        evaluate(a, Phase::Random, &mut trace);
    }

    let starts = &trace[..config.n_random_starts];
    let mean = starts.iter().map(|o| o.objective).sum::<f64>() / starts.len() as f64;
    let var = starts.iter().map(|o| (o.objective - mean).powi(2)).sum::<f64>() / starts.len() as f64;
    let signal_variance = if var > 0.0 { var } else { 1.0 };

    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| config.lower + (config.upper - config.lower) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    while trace.len() < config.n_calls {
        let state = GPState {
            observations: trace.clone(),
            length_scale: config.kernel_length_scale,
            signal_variance,
            noise_variance: config.noise_variance,
        };
        let gp = FittedGp::fit(&state)?;
        let best = trace.iter().map(|o| o.objective).fold(f64::INFINITY, f64::min);
        let mut pick = grid[0];
        let mut pick_ei = f64::NEG_INFINITY;
        for &a in &grid {
            let (m, v) = gp.posterior(a);
            let ei = expected_improvement_from(m, v, best);
            if ei > pick_ei {
                pick_ei = ei;
                pick = a;
            }
        }
        evaluate(pick, Phase::Ei, &mut trace);
    }

    let (best_alpha, best_value) = trace
        .iter()
        .fold((trace[0].alpha, trace[0].objective), |acc, o| {
            if o.objective < acc.1 { (o.alpha, o.objective) } else { acc }
        });
    Ok(MinimizeResult { best_alpha, best_value, trace })
}

/// Trace as CSV with columns `alpha,objective,call_index,phase`.
pub fn trace_csv(trace: &[Observation]) -> String {
    let mut out = String::from("alpha,objective,call_index,phase\n");
    for (i, o) in trace.iter().enumerate() {
        out.push_str(&format!("{:.17e},{:.17e},{},{}\n", o.alpha, o.objective, i, o.phase.as_str()));
    }
    out
}
