//! GP posterior, expected improvement and the minimization loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use weightmix_core::gp::*;

fn state(points: &[(f64, f64)], signal_variance: f64, noise: f64) -> GPState {
    GPState {
        observations: points
            .iter()
            .map(|&(alpha, objective)| Observation { alpha, objective, phase: Phase::Random, penalized: false })
            .collect(),
        length_scale: 0.2,
        signal_variance,
        noise_variance: noise,
    }
}

/// Solves `a x = b` by Gauss-Jordan elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

fn matern(r: f64, l: f64, s2: f64) -> f64 {
    let d = 5f64.sqrt() * r.abs() / l;
    s2 * (1.0 + d + d * d / 3.0) * (-d).exp()
}

#[test]
fn posterior_matches_dense_formula() {
    let pts = [(0.12, 0.8), (0.3, 0.35), (0.47, 0.2), (0.66, 0.41), (0.85, 0.9)];
    let (s2, noise) = (0.09, 1e-4);
    let st = state(&pts, s2, noise);
    let m0 = pts.iter().map(|p| p.1).sum::<f64>() / 5.0;
    let kmat: Vec<Vec<f64>> = pts
        .iter()
        .enumerate()
        .map(|(i, a)| {
            pts.iter()
                .enumerate()
                .map(|(j, b)| matern(a.0 - b.0, 0.2, s2) + if i == j { noise } else { 0.0 })
                .collect()
        })
        .collect();
    let resid: Vec<f64> = pts.iter().map(|p| p.1 - m0).collect();
    let w = solve(kmat.clone(), resid);
    for i in 0..=40 {
        let x = i as f64 / 40.0;
        let ks: Vec<f64> = pts.iter().map(|p| matern(x - p.0, 0.2, s2)).collect();
        let mean = m0 + ks.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let kinv_ks = solve(kmat.clone(), ks.clone());
        let var = s2 - ks.iter().zip(&kinv_ks).map(|(a, b)| a * b).sum::<f64>();
        let (m, v) = gp_posterior(&st, x).unwrap();
        assert!((m - mean).abs() < 1e-9, "mean at {x}: {m} vs {mean}");
        assert!((v - var.max(0.0)).abs() < 1e-9, "variance at {x}: {v} vs {var}");
    }
}

#[test]
fn kernel_values() {
    assert_eq!(matern52(0.0, 0.2, 1.7), 1.7);
    assert!((matern52(0.2, 0.2, 1.0) - matern(0.2, 0.2, 1.0)).abs() < 1e-15);
    assert!(matern52(0.3, 0.2, 1.0) > matern52(0.31, 0.2, 1.0));
    assert_eq!(matern52(-0.1, 0.2, 1.0), matern52(0.1, 0.2, 1.0));
}

#[test]
fn expected_improvement_agrees_with_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (mean, var, best) in [(0.5, 0.04, 0.45), (0.2, 0.01, 0.3), (1.0, 0.25, 0.9), (0.0, 1.0, 0.0)] {
        let dist = Normal::new(mean, f64::sqrt(var)).unwrap();
        let n = 1_000_000;
        let mc = (0..n).map(|_| (best - dist.sample(&mut rng)).max(0.0)).sum::<f64>() / n as f64;
        let ei = expected_improvement_from(mean, var, best);
        assert!((ei - mc).abs() / mc < 0.01, "EI {ei} vs Monte Carlo {mc} for {mean},{var},{best}");
    }
    assert_eq!(expected_improvement_from(0.5, 0.0, 0.3), 0.0);
    assert!((expected_improvement_from(0.2, 0.0, 0.3) - 0.1).abs() < 1e-15);
}

fn config(seed: u64) -> BOConfig {
    BOConfig { seed, ..BOConfig::default() }
}

#[test]
fn quadratic_minimum_is_found() {
    for seed in 0..10 {
        let r = minimize(|a| (a - 0.37).powi(2), &config(seed)).unwrap();
        assert!((r.best_alpha - 0.37).abs() < 0.02, "seed {seed}: {}", r.best_alpha);
        assert_eq!(r.trace.len(), 100);
        for (i, o) in r.trace.iter().enumerate() {
            assert!((0.1..=0.9).contains(&o.alpha));
            assert_eq!(o.phase, if i < 30 { Phase::Random } else { Phase::Ei });
        }
        let best_random = r.trace[..30].iter().map(|o| o.objective).fold(f64::INFINITY, f64::min);
        assert!(r.best_value <= best_random);
        assert_eq!(r.best_value, (r.best_alpha - 0.37).powi(2));
    }
}

#[test]
fn constant_objective_is_harmless() {
    let r = minimize(|_| 0.25, &config(3)).unwrap();
    assert_eq!(r.best_value, 0.25);
    assert!(r.trace.iter().all(|o| o.objective == 0.25));
}

#[test]
fn non_finite_evaluations_are_penalized() {
    let r = minimize(|a| if a > 0.6 { f64::NAN } else { (a - 0.3).abs() }, &config(5)).unwrap();
    assert!(r.trace.iter().any(|o| o.penalized));
    for o in &r.trace {
        assert_eq!(o.penalized, o.alpha > 0.6);
        if o.penalized {
            assert_eq!(o.objective, NON_FINITE_PENALTY);
        }
    }
    assert!(r.best_value.is_finite() && r.best_alpha <= 0.6);
}

#[test]
fn minimization_is_deterministic_and_traced() {
    let f = |a: f64| (3.0 * a).sin() + a;
    let a = minimize(f, &config(9)).unwrap();
    let b = minimize(f, &config(9)).unwrap();
    assert_eq!(a, b);
    let csv = trace_csv(&a.trace);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "alpha,objective,call_index,phase");
    assert_eq!(lines.len(), 101);
    let cols: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cols[0].parse::<f64>().unwrap(), a.trace[0].alpha);
    assert_eq!(cols[2], "0");
    assert_eq!(cols[3], "random");
    assert!(lines[100].ends_with(",99,ei"));
}

#[test]
fn bad_configs_are_rejected() {
    assert!(minimize(|a| a, &BOConfig { lower: 0.9, upper: 0.1, ..config(0) }).is_err());
    assert!(minimize(|a| a, &BOConfig { n_random_starts: 0, ..config(0) }).is_err());
    assert!(minimize(|a| a, &BOConfig { n_calls: 5, n_random_starts: 6, ..config(0) }).is_err());
}
