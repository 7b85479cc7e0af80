//! Evaluation metrics and significance testing.
//!
//! Threshold rule everywhere: a sample is predicted positive when its
//! positive-class score is `>=` the threshold.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use crate::error::{invalid, shape_err, Result};
use crate::tensor::WeightSet;

/// z-value used to turn a 95% interval width into a standard error.
pub const Z_95: f64 = 1.96;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub mcc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auprc: f64,
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub mcc: f64,
    pub mcc_ci: (f64, f64),
    pub threshold: f64,
    pub n: usize,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub se1: f64,
    pub se2: f64,
    pub delta_mcc: f64,
    pub delta_se: f64,
    pub z: f64,
    pub p_two_tailed: f64,
    pub significant: bool,
}

fn check_labels(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return shape_err(format!("{} scores but {} labels", scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

fn require_both_classes(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    let (pos, neg) = check_labels(scores, labels)?;
    if pos == 0 || neg == 0 {
        return invalid("both classes must be present");
    }
    Ok((pos, neg))
}

fn f_from_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Threshold among `{0, 1}` and the midpoints of adjacent distinct scores that
/// maximizes the F-score; ties resolve to the lowest threshold.
pub fn optimal_threshold(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = require_both_classes(scores, labels)?;
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // distinct values ascending with positive/negative counts
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for (s, l) in pairs {
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if l == 1 { g.1 += 1 } else { g.2 += 1 }
            }
            _ => groups.push((s, (l == 1) as u64, (l == 0) as u64)),
        }
    }
    let total_pos = pos as u64;
    let n = scores.len() as u64;

    // candidate 0: everything with score >= 0
    let nonneg: Vec<&(f64, u64, u64)> = groups.iter().filter(|g| g.0 >= 0.0).collect();
    let tp0: u64 = nonneg.iter().map(|g| g.1).sum();
    let pp0: u64 = nonneg.iter().map(|g| g.1 + g.2).sum();
    let mut best_t = 0.0;
    let mut best_f = f_from_counts(tp0, pp0 - tp0, total_pos - tp0);

    // midpoints: predicted positive = all groups above the midpoint
    let mut tp_above = total_pos;
    let mut pp_above = n;
    for j in 0..groups.len().saturating_sub(1) {
        tp_above -= groups[j].1;
        pp_above -= groups[j].1 + groups[j].2;
        let t = 0.5 * (groups[j].0 + groups[j + 1].0);
        let f = f_from_counts(tp_above, pp_above - tp_above, total_pos - tp_above);
        if f > best_f {
            best_f = f;
            best_t = t;
        }
    }

    let tp1: u64 = groups.iter().filter(|g| g.0 >= 1.0).map(|g| g.1).sum();
    let pp1: u64 = groups.iter().filter(|g| g.0 >= 1.0).map(|g| g.1 + g.2).sum();
    if f_from_counts(tp1, pp1 - tp1, total_pos - tp1) > best_f {
        best_t = 1.0;
    }
    Ok(best_t)
}

pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_labels(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Standard confusion-matrix metrics. Zero denominators yield 0 (MCC included).
pub fn metrics(c: &ConfusionCounts) -> ClassMetrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let specificity = ratio(c.tn, c.tn + c.fp);
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = if den == 0.0 { 0.0 } else { ((tp * tn - fp * fn_) / den).clamp(-1.0, 1.0) };
    ClassMetrics {
        balanced_accuracy: 0.5 * (recall + specificity),
        precision,
        recall,
        f_score: f_from_counts(c.tp, c.fp, c.fn_),
        mcc,
    }
}

/// Step-wise average precision with tied scores grouped.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = require_both_classes(scores, labels)?;
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 == 1 { tp += 1 } else { fp += 1 }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
        prev_recall = recall;
    }
    Ok(ap)
}

/// `(threshold, precision, recall)` at every distinct score, highest first.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64, f64)>> {
    let (pos, _) = require_both_classes(scores, labels)?;
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut out = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 == 1 { tp += 1 } else { fp += 1 }
            i += 1;
        }
        out.push((s, tp as f64 / (tp + fp) as f64, tp as f64 / pos as f64));
    }
    Ok(out)
}

/// Smallest `x` in [0, 1] with `I_x(a, b) >= target`, by bisection.
fn beta_quantile(target: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact (Clopper-Pearson) binomial interval for `k` successes in `n` trials.
pub fn clopper_pearson(k: u64, n: u64, level: f64) -> Result<(f64, f64)> {
    if n == 0 || k > n {
        return invalid(format!("need 0 <= k <= n and n >= 1, got k={k}, n={n}"));
    }
    if !(level > 0.0 && level < 1.0) {
        return invalid(format!("confidence level {level} outside (0, 1)"));
    }
    let tail = 0.5 * (1.0 - level);
    let (kf, nf) = (k as f64, n as f64);
    let lower = if k == 0 { 0.0 } else { beta_quantile(tail, kf, nf - kf + 1.0) };
    let upper = if k == n { 1.0 } else { beta_quantile(1.0 - tail, kf + 1.0, nf - kf) };
    Ok((lower, upper))
}

/// Interval for an MCC value through the proportion `(mcc + 1) / 2` over `n` samples.
pub fn mcc_ci(mcc: f64, n: u64, level: f64) -> Result<(f64, f64)> {
    if !(-1.0..=1.0).contains(&mcc) || n == 0 {
        return invalid(format!("mcc {mcc} or n {n} out of range"));
    }
    let p = (mcc + 1.0) / 2.0;
    let k = (p * n as f64).round() as u64;
    let (lo, hi) = clopper_pearson(k.min(n), n, level)?;
    Ok((2.0 * lo - 1.0, 2.0 * hi - 1.0))
}

/// Standard error implied by a 95% interval.
pub fn standard_error(ci: (f64, f64)) -> f64 {
    (ci.1 - ci.0) / (2.0 * Z_95)
}

/// Two-tailed standard normal tail probability.
pub fn two_tailed_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// CI-based z-test between two metric values.
pub fn significance(v1: f64, ci1: (f64, f64), v2: f64, ci2: (f64, f64)) -> Result<SignificanceResult> {
    if ci1.0 > ci1.1 || ci2.0 > ci2.1 {
        return invalid("confidence interval bounds are not ordered");
    }
    let se1 = standard_error(ci1);
    let se2 = standard_error(ci2);
    let delta_mcc = v2 - v1;
    let delta_se = (se1 * se1 + se2 * se2).sqrt();
    if delta_se == 0.0 {
        return invalid("both confidence intervals are degenerate");
    }
    let z = delta_mcc / delta_se;
    let p = two_tailed_p(z);
    Ok(SignificanceResult {
        se1,
        se2,
        delta_mcc,
        delta_se,
        z,
        p_two_tailed: p,
        significant: p < SIGNIFICANCE_LEVEL,
    })
}

/// Full report at a fixed threshold.
pub fn metrics_report(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    let counts = confusion(scores, labels, threshold)?;
    let m = metrics(&counts);
    let ap = auprc(scores, labels)?;
    let n = scores.len();
    Ok(MetricsReport {
        auprc: ap,
        balanced_accuracy: m.balanced_accuracy,
        precision: m.precision,
        recall: m.recall,
        f_score: m.f_score,
        mcc: m.mcc,
        mcc_ci: mcc_ci(m.mcc, n as u64, 0.95)?,
        threshold,
        n,
        counts,
    })
}

/// 1-D Wasserstein-1 distance between two empirical samples.
pub fn emd_samples(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return invalid("EMD needs non-empty samples");
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    let mut prev = xs[0].min(ys[0]);
    while i < xs.len() || j < ys.len() {
        let next = match (xs.get(i), ys.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < xs.len() && xs[i] == next {
            i += 1;
        }
        while j < ys.len() && ys[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

pub fn emd_1d(a: &WeightSet, b: &WeightSet) -> Result<f64> {
    emd_samples(&a.flatten(), &b.flatten())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return shape_err("correlation needs equal-length, non-empty inputs");
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return invalid("correlation undefined for zero-variance input");
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of position-paired parameters.
pub fn weight_correlation(a: &WeightSet, b: &WeightSet) -> Result<f64> {
    a.check_same_shape(b)?;
    pearson(&a.flatten(), &b.flatten())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub counts: Vec<u64>,
    pub density: Vec<f64>,
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxHistogram {
    pub bins: usize,
    pub negative: ClassHistogram,
    pub positive: ClassHistogram,
}

/// Per-class density histograms of positive-class scores over [0, 1].
pub fn softmax_histogram(scores: &[f64], labels: &[u8], bins: usize) -> Result<SoftmaxHistogram> {
    if bins < 2 {
        return invalid("need at least 2 bins");
    }
    check_labels(scores, labels)?;
    let build = |class: u8| {
        let mut counts = vec![0u64; bins];
        for (&s, &l) in scores.iter().zip(labels) {
            if l == class {
                let b = ((s.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
                counts[b] += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        let width = 1.0 / bins as f64;
        let density = counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / (total as f64 * width) })
            .collect();
        ClassHistogram { counts, density, empty: total == 0 }
    };
    Ok(SoftmaxHistogram { bins, negative: build(0), positive: build(1) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_degenerate_confusions() {
        let m = metrics(&ConfusionCounts { tp: 5, fp: 0, tn: 5, fn_: 0 });
        assert_eq!((m.precision, m.recall, m.f_score, m.mcc), (1.0, 1.0, 1.0, 1.0));
        let m = metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 5, fn_: 5 });
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.mcc, 0.0);
    }

    #[test]
    fn threshold_on_separated_scores() {
        let scores = [0.1, 0.2, 0.15, 0.8, 0.9, 0.85];
        let labels = [0, 0, 0, 1, 1, 1];
        let t = optimal_threshold(&scores, &labels).unwrap();
        assert!((t - 0.5).abs() < 1e-12);
        let c = confusion(&scores, &labels, t).unwrap();
        assert_eq!(metrics(&c).f_score, 1.0);
    }

    #[test]
    fn constant_scores_predict_all_positive() {
        let scores = [0.4; 8];
        let labels = [1, 1, 1, 0, 0, 0, 0, 0];
        let t = optimal_threshold(&scores, &labels).unwrap();
        assert_eq!(t, 0.0);
        let p = 3.0 / 8.0;
        let f = metrics(&confusion(&scores, &labels, t).unwrap()).f_score;
        assert!((f - 2.0 * p / (p + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(optimal_threshold(&[0.2, 0.3], &[1, 1]).is_err());
        assert!(auprc(&[0.2, 0.3], &[0, 0]).is_err());
    }

    #[test]
    fn auprc_edge_cases() {
        assert_eq!(auprc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auprc(&[0.5; 5], &[1, 0, 0, 1, 0]).unwrap(), 0.4);
    }

    #[test]
    fn clopper_pearson_boundaries() {
        let (lo, hi) = clopper_pearson(0, 10, 0.95).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.025_f64.powf(0.1))).abs() < 1e-12);
        assert!((hi - 0.3085).abs() < 1e-4);
        assert_eq!(clopper_pearson(7, 7, 0.95).unwrap().1, 1.0);
        assert!(clopper_pearson(3, 2, 0.95).is_err());
        assert!(clopper_pearson(0, 0, 0.95).is_err());
    }

    #[test]
    fn mcc_ci_cases() {
        assert_eq!(mcc_ci(1.0, 37, 0.95).unwrap().1, 1.0);
        let (lo, hi) = mcc_ci(0.0, 100, 0.95).unwrap();
        assert!((lo + hi).abs() < 0.02);
        let mut prev = f64::INFINITY;
        for n in [10, 20, 50, 100, 500, 1000, 5000] {
            let (lo, hi) = mcc_ci(0.4, n, 0.95).unwrap();
            assert!(hi - lo < prev);
            prev = hi - lo;
        }
    }

    #[test]
    fn table4_significance() {
        let r = significance(0.6204, (0.6073, 0.6335), 0.6964, (0.6840, 0.7088)).unwrap();
        assert!((r.se1 - 0.006684).abs() < 1e-6);
        assert!((r.se2 - 0.006327).abs() < 1e-6);
        assert!((r.z - 8.26).abs() < 0.01);
        assert!(r.p_two_tailed < 1e-5 && r.significant);
    }

    #[test]
    fn equal_mcc_not_significant() {
        let r = significance(0.5, (0.45, 0.55), 0.5, (0.44, 0.56)).unwrap();
        assert_eq!(r.z, 0.0);
        assert_eq!(r.p_two_tailed, 1.0);
        assert!(!r.significant);
        assert!(significance(0.5, (0.5, 0.5), 0.6, (0.6, 0.6)).is_err());
        assert!(significance(0.5, (0.6, 0.4), 0.6, (0.5, 0.7)).is_err());
    }

    #[test]
    fn emd_examples() {
        assert_eq!(emd_samples(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(emd_samples(&[0.3, -1.0, 2.0], &[2.0, 0.3, -1.0]).unwrap(), 0.0);
        assert!((emd_samples(&[0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(emd_samples(&[], &[1.0]).is_err());
    }

    #[test]
    fn correlation_signs() {
        let x = [0.3, -1.2, 2.5, 0.7];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &x).unwrap(), 1.0);
        assert_eq!(pearson(&x, &neg).unwrap(), -1.0);
        assert!(pearson(&x, &[1.0; 4]).is_err());
    }

    #[test]
    fn histogram_mass() {
        let h = softmax_histogram(&[1.0, 1.0, 0.0, 0.49], &[1, 1, 0, 0], 50).unwrap();
        assert_eq!(h.positive.counts[49], 2);
        assert_eq!(h.negative.counts[0], 1);
        assert_eq!(h.negative.counts[24], 1);
        let integral: f64 = h.negative.density.iter().map(|d| d / 50.0).sum();
        assert!((integral - 1.0).abs() < 1e-9);
        let h = softmax_histogram(&[0.3], &[0], 4).unwrap();
        assert!(h.positive.empty);
        assert!(softmax_histogram(&[0.3], &[0], 1).is_err());
    }
}
