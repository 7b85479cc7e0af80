//! Parameter-space ensembles: equal-weight averaging and F-score-weighted
//! simplex search over mixing factors.
//!
//! The F-weighted search minimizes `1 - F(validation)` of the averaged model.
//! That objective is piecewise constant, so every restart is refined with a
//! derivative-free Nelder-Mead in softmax coordinates. The restart set always
//! contains the vertices and the centroid. A regular simplex lattice is also
//! scored when small enough, so narrow optimal regions are not missed.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, shape_err, Result};
use crate::nn::{softmax, Network, NetworkSpec};
use crate::stats::{confusion, metrics, optimal_threshold};
use crate::tensor::WeightSet;

pub const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexFactors(Vec<f64>);

impl SimplexFactors {
    pub fn new(factors: Vec<f64>) -> Result<Self> {
        if factors.is_empty() {
            return invalid("no factors");
        }
        if factors.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return invalid(format!("factors {factors:?} outside [0, 1]"));
        }
        let sum: f64 = factors.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return invalid(format!("factors sum to {sum}, not 1"));
        }
        Ok(Self(factors))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `out[p] = sum_i factors[i] * models[i][p]`.
pub fn weighted_average(models: &[WeightSet], factors: &SimplexFactors) -> Result<WeightSet> {
    if models.is_empty() {
        return invalid("no models to average");
    }
    if models.len() != factors.len() {
        return shape_err(format!("{} models but {} factors", models.len(), factors.len()));
    }
    for m in &models[1..] {
        models[0].check_same_shape(m)?;
    }
    let f = factors.as_slice();
    let mut out = models[0].clone();
    out.params_mut().for_each(|p| *p *= f[0]);
    for (m, &fi) in models.iter().zip(f).skip(1) {
        for (o, p) in out.params_mut().zip(m.params()) {
            *o += fi * p;
        }
    }
    Ok(out)
}

/// Equal-weight averaging of two or more models.
pub fn ewa(models: &[WeightSet]) -> Result<WeightSet> {
    if models.len() < 2 {
        return invalid("equal-weight averaging needs at least two models");
    }
    weighted_average(models, &SimplexFactors::uniform(models.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub factors: SimplexFactors,
    pub weights: WeightSet,
    /// `1 - F` on the validation split at the optimum.
    pub validation_error: f64,
    pub restarts_run: usize,
    pub evaluations: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FslsqpConfig {
    pub restarts: usize,
    pub seed: u64,
    /// Nelder-Mead evaluation budget per restart.
    pub max_evals_per_restart: usize,
    /// Finest resolution of the scored simplex lattice.
    pub lattice_resolution: usize,
    /// Resolution is lowered until the lattice fits in this many points.
    pub lattice_budget: usize,
}

impl Default for FslsqpConfig {
    fn default() -> Self {
        Self { restarts: 100, seed: 0, max_evals_per_restart: 24, lattice_resolution: 100, lattice_budget: 128 }
    }
}

/// Validation error `1 - F` of a model, F taken at the F-maximizing threshold.
pub fn validation_error(scores: &[f64], labels: &[u8]) -> (f64, Option<String>) {
    match optimal_threshold(scores, labels) {
        Ok(t) => {
            let c = confusion(scores, labels, t).expect("lengths match");
            (1.0 - metrics(&c).f_score, None)
        }
        Err(e) => (1.0, Some(format!("F undefined on validation set ({e}); treated as 0"))),
    }
}

struct Scorer<'a> {
    net: Network,
    models: &'a [WeightSet],
    val: &'a Dataset,
    cache: BTreeMap<Vec<u64>, f64>,
    evaluations: usize,
    warnings: Vec<String>,
}

impl Scorer<'_> {
    fn error(&mut self, factors: &[f64]) -> f64 {
        let key: Vec<u64> = factors.iter().map(|f| f.to_bits()).collect();
        if let Some(&e) = self.cache.get(&key) {
            return e;
        }
        let avg = weighted_average(self.models, &SimplexFactors(factors.to_vec())).expect("validated inputs");
        let scores = self.net.positive_scores(&avg, self.val);
        let (err, warning) = validation_error(&scores, &self.val.labels);
        if let Some(w) = warning {
            if self.warnings.len() < 4 {
                self.warnings.push(w);
            }
        }
        self.evaluations += 1;
        self.cache.insert(key, err);
        err
    }
}

/// Softmax coordinates with the last logit pinned at zero.
fn to_simplex(z: &[f64]) -> Vec<f64> {
    let mut logits = z.to_vec();
    logits.push(0.0);
    softmax(&logits)
}

fn from_simplex(p: &[f64]) -> Vec<f64> {
    const CAP: f64 = 12.0;
    let last = p[p.len() - 1].max(1e-300);
    p[..p.len() - 1]
        .iter()
        .map(|&pi| (pi.max(1e-300) / last).ln().clamp(-CAP, CAP))
        .collect()
}

/// Nelder-Mead from `start`; returns the best `(factors, error)` seen.
fn nelder_mead(scorer: &mut Scorer, start: &[f64], budget: usize) -> (Vec<f64>, f64) {
    let d = start.len();
    let eval = |s: &mut Scorer, z: &[f64]| {
        let p = to_simplex(z);
        let e = s.error(&p);
        (p, e)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let mut best = {
        let (p, e) = eval(scorer, start);
        simplex.push((start.to_vec(), e));
        (p, e)
    };
    let mut used = 1;
    for i in 0..d {
        let mut z = start.to_vec();
        z[i] += if z[i] > 0.0 { -1.0 } else { 1.0 };
        let (p, e) = eval(scorer, &z);
        used += 1;
        if e < best.1 {
            best = (p, e);
        }
        simplex.push((z, e));
    }
    let track = |best: &mut (Vec<f64>, f64), p: Vec<f64>, e: f64| {
        if e < best.1 {
            *best = (p, e);
        }
    };

    while used < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[d].1 - simplex[0].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(z, _)| z.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= 1e-12 || diameter < 1e-3 {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|(z, _)| z[j]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (w - c)).collect()
        };
        let zr = along(-1.0);
        let (pr, er) = eval(scorer, &zr);
        used += 1;
        track(&mut best, pr, er);
        if er < simplex[0].1 {
            let ze = along(-2.0);
            let (pe, ee) = eval(scorer, &ze);
            used += 1;
            track(&mut best, pe, ee);
            simplex[d] = if ee < er { (ze, ee) } else { (zr, er) };
        } else if er < simplex[d - 1].1 {
            simplex[d] = (zr, er);
        } else {
            let zc = if er < worst.1 { along(-0.5) } else { along(0.5) };
            let (pc, ec) = eval(scorer, &zc);
            used += 1;
            track(&mut best, pc, ec);
            if ec < worst.1.min(er) {
                simplex[d] = (zc, ec);
            } else {
                let anchor = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let z: Vec<f64> = anchor.iter().zip(&item.0).map(|(a, b)| a + 0.5 * (b - a)).collect();
                    let (p, e) = eval(scorer, &z);
                    used += 1;
                    track(&mut best, p, e);
                    *item = (z, e);
                }
            }
        }
    }
    best
}

/// All points of the simplex lattice `{ i / res }` in `k` dimensions.
fn lattice(k: usize, res: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, res: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == k - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / res as f64).collect());
            cur.pop();
            return;
        }
        for i in 0..=left {
            cur.push(i);
            rec(k, left - i, res, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, res, res, &mut Vec::new(), &mut out);
    out
}

fn binomial(n: usize, r: usize) -> usize {
    (0..r).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Searches simplex mixing factors minimizing `1 - F(validation)` of the averaged model.
pub fn fslsqp(
    models: &[WeightSet],
    spec: &NetworkSpec,
    val_set: &Dataset,
    config: &FslsqpConfig,
) -> Result<EnsembleResult> {
    let k = models.len();
    if k < 2 {
        return invalid("F-weighted ensembling needs at least two models");
    }
    if val_set.is_empty() {
        return invalid("validation set is empty");
    }
    for m in models {
        spec.check_weights(m)?;
    }
    if val_set.sample_len != spec.input_len() {
        return shape_err("validation samples do not match the network input");
    }
    let mut scorer = Scorer {
        net: Network::new(spec)?,
        models,
        val: val_set,
        cache: BTreeMap::new(),
        evaluations: 0,
        warnings: Vec::new(),
    };

    let mut starts: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    starts.push(vec![1.0 / k as f64; k]);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    while starts.len() < config.restarts {
        let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        starts.push(draws.into_iter().map(|d| d / total).collect());
    }

    // (error, restart index, factors); lowest error, then lowest index, wins
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut consider = |err: f64, idx: usize, p: Vec<f64>| {
        if best.as_ref().is_none_or(|b| err < b.0) {
            best = Some((err, idx, p));
        }
    };
    for (idx, start) in starts.iter().enumerate() {
        let err = scorer.error(start);
        consider(err, idx, start.clone());
        let (p, e) = nelder_mead(&mut scorer, &from_simplex(start), config.max_evals_per_restart);
        consider(e, idx, p);
    }
    let mut res = config.lattice_resolution;
    while res > 0 && binomial(res + k - 1, k - 1) > config.lattice_budget {
        res -= 1;
    }
    if res > 0 {
        for p in lattice(k, res) {
            let e = scorer.error(&p);
            consider(e, starts.len(), p);
        }
    }

    let (validation_error, _, raw) = best.expect("at least one restart");
    let clamped: Vec<f64> = raw.iter().map(|f| f.clamp(0.0, 1.0)).collect();
    let factors = SimplexFactors::new(clamped)?;
    let weights = weighted_average(models, &factors)?;
    Ok(EnsembleResult {
        factors,
        weights,
        validation_error,
        restarts_run: starts.len(),
        evaluations: scorer.evaluations,
        warnings: scorer.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{LayerWeights, TensorF};

    fn scalar(v: f64) -> WeightSet {
        WeightSet::new(vec![LayerWeights {
            layer_index: 0,
            kernel: TensorF::new(vec![1], vec![v]).unwrap(),
            bias: TensorF::new(vec![1], vec![v]).unwrap(),
        }])
    }

    #[test]
    fn simplex_validation() {
        assert!(SimplexFactors::new(vec![0.5, 0.5]).is_ok());
        assert!(SimplexFactors::new(vec![0.6, 0.6]).is_err());
        assert!(SimplexFactors::new(vec![1.2, -0.2]).is_err());
        assert!(SimplexFactors::new(vec![]).is_err());
    }

    #[test]
    fn vertex_and_mean() {
        let a = scalar(1.0);
        let b = scalar(3.0);
        let v = weighted_average(&[a.clone(), b.clone()], &SimplexFactors::new(vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(v, a);
        assert_eq!(ewa(&[a.clone(), b.clone()]).unwrap(), scalar(2.0));
        assert!(ewa(std::slice::from_ref(&a)).is_err());
        assert!(weighted_average(&[a.clone(), b], &SimplexFactors::uniform(3)).is_err());
    }

    #[test]
    fn mismatched_models_rejected() {
        let mut c = scalar(1.0);
        c.entries[0].kernel = TensorF::new(vec![2], vec![1.0, 1.0]).unwrap();
        assert!(ewa(&[scalar(1.0), c]).is_err());
    }

    #[test]
    fn lattice_counts() {
        assert_eq!(lattice(2, 100).len(), 101);
        assert_eq!(lattice(3, 10).len(), 66);
        assert_eq!(binomial(102, 2), 5151);
        for p in lattice(3, 4) {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_coordinates_round_trip() {
        let p = [0.2, 0.3, 0.5];
        let back = to_simplex(&from_simplex(&p));
        for (a, b) in p.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
