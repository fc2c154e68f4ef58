//! Scoring-quality metrics and paired model comparison.
//!
//! Outcomes are passed as `bad: &[bool]`, with Bad as the positive class and
//! higher scores meaning higher risk.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("need both Good and Bad cases, got {bad} Bad and {good} Good")]
    SingleClass { bad: usize, good: usize },
    #[error("no cases to evaluate")]
    Empty,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 paired folds, got {0}")]
    TooFewFolds(usize),
    #[error("invalid profit parameters: {0}")]
    InvalidParams(String),
}

fn check_lengths(scores: &[f64], bad: &[bool]) -> Result<(), EvalError> {
    if scores.len() != bad.len() {
        return Err(EvalError::LengthMismatch {
            left: scores.len(),
            right: bad.len(),
        });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

fn class_counts(bad: &[bool]) -> Result<(usize, usize), EvalError> {
    let n_bad = bad.iter().filter(|&&b| b).count();
    let n_good = bad.len() - n_bad;
    if n_bad == 0 || n_good == 0 {
        return Err(EvalError::SingleClass { bad: n_bad, good: n_good });
    }
    Ok((n_bad, n_good))
}

/// Groups of tied scores in descending score order, as (bad, good) counts.
fn tie_groups(scores: &[f64], bad: &[bool]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut last = None;
    for i in order {
        if last != Some(scores[i]) {
            groups.push((0, 0));
            last = Some(scores[i]);
        }
        let g = groups.last_mut().unwrap();
        if bad[i] {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Probability that a random Bad outranks a random Good, ties counting half.
pub fn auc(scores: &[f64], bad: &[bool]) -> Result<f64, EvalError> {
    check_lengths(scores, bad)?;
    let (n_bad, n_good) = class_counts(bad)?;
    // walk upwards from the lowest scores, counting Goods already passed
    let (mut goods_below, mut twice_u) = (0u128, 0u128);
    for (b, g) in tie_groups(scores, bad).into_iter().rev() {
        twice_u += 2 * b as u128 * goods_below + b as u128 * g as u128;
        goods_below += g as u128;
    }
    Ok(twice_u as f64 / (2 * n_bad as u128 * n_good as u128) as f64)
}

/// Mean squared error against the Bad indicator.
pub fn brier(scores: &[f64], bad: &[bool]) -> Result<f64, EvalError> {
    check_lengths(scores, bad)?;
    let sum: f64 = scores
        .iter()
        .zip(bad)
        .map(|(s, &b)| {
            let y = if b { 1.0 } else { 0.0 };
            (s - y) * (s - y)
        })
        .sum();
    Ok(sum / scores.len() as f64)
}

/// ROC points (false positive rate, true positive rate) from rejecting nobody
/// to rejecting everybody, one point per distinct score.
pub fn roc_curve(scores: &[f64], bad: &[bool]) -> Result<Vec<(f64, f64)>, EvalError> {
    check_lengths(scores, bad)?;
    let (n_bad, n_good) = class_counts(bad)?;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0, 0);
    for (b, g) in tie_groups(scores, bad) {
        tp += b;
        fp += g;
        points.push((fp as f64 / n_good as f64, tp as f64 / n_bad as f64));
    }
    Ok(points)
}

/// Parameters of the EMP-style profit model.
///
/// The loss fraction λ of a Bad loan has mass `p0` at 0, mass `p1` at 1 and
/// the remaining mass spread uniformly over (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfitParams {
    /// Return on a Good loan, as a fraction of the principal.
    pub roi: f64,
    pub p0: f64,
    pub p1: f64,
    /// Bad prior; the sample's Bad rate when absent.
    pub prior_bad: Option<f64>,
}

impl Default for ProfitParams {
    fn default() -> Self {
        ProfitParams {
            roi: 0.26,
            p0: 0.55,
            p1: 0.1,
            prior_bad: None,
        }
    }
}

impl ProfitParams {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidParams(m.to_string()));
        if !(self.roi > 0.0 && self.roi < 1.0) {
            return bad("roi must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.p0) || !(0.0..=1.0).contains(&self.p1) {
            return bad("p0 and p1 must lie in [0, 1]");
        }
        if self.p0 + self.p1 > 1.0 + 1e-12 {
            return bad("p0 + p1 must not exceed 1");
        }
        if let Some(pi) = self.prior_bad {
            if !(pi > 0.0 && pi < 1.0) {
                return bad("prior_bad must lie in (0, 1)");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Profit {
    /// Expected maximum profit per applicant, in units of principal.
    pub emp: f64,
    /// λ-averaged share of applicants rejected at the optimal cutoff.
    pub best_cutoff_fraction: f64,
}

/// Exact integrals over λ ∈ [0, 1] of the best profit `max_i (λ·slope_i −
/// cost_i)` and of the share rejected by the maximizing line.
///
/// The maximum is the upper envelope of the lines, which is piecewise linear,
/// so it is integrated segment by segment.
fn integrate_envelope(candidates: &[(f64, f64, f64)]) -> (f64, f64) {
    let mut lines = candidates.to_vec();
    // ascending slope; among equal slopes the cheapest comes last and wins
    lines.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let cross = |l: &(f64, f64, f64), r: &(f64, f64, f64)| (r.1 - l.1) / (r.0 - l.0);
    let mut hull: Vec<(f64, f64, f64)> = Vec::with_capacity(lines.len());
    for line in lines {
        if hull.last().is_some_and(|h| h.0 == line.0) {
            hull.pop();
        }
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &line) <= cross(&hull[hull.len() - 2], &hull[hull.len() - 1]) {
            hull.pop();
        }
        hull.push(line);
    }
    let (mut profit, mut share) = (0.0, 0.0);
    let mut from = 0.0;
    for (k, line) in hull.iter().enumerate() {
        let to = hull.get(k + 1).map_or(1.0, |next| cross(line, next)).clamp(0.0, 1.0);
        if to > from {
            profit += 0.5 * line.0 * (to * to - from * from) - line.1 * (to - from);
            share += line.2 * (to - from);
            from = to;
        }
    }
    (profit, share)
}

/// EMP-style expected maximum profit.
///
/// Rejecting everyone scoring at or above a cutoff `t` earns, per applicant,
/// `λ·π_b·F_b(t) − roi·π_g·F_g(t)` where `F` are the class-wise rejection
/// rates. For each λ the best cutoff is taken (the smallest rejection on
/// ties); the result is the expectation of that maximum over λ.
pub fn profit_measure(scores: &[f64], bad: &[bool], params: &ProfitParams) -> Result<Profit, EvalError> {
    check_lengths(scores, bad)?;
    params.validate()?;
    let (n_bad, n_good) = class_counts(bad)?;
    if params.p0 >= 1.0 {
        log::warn!(target: "eval", "profit measure with p0 = 1 is identically zero");
        return Ok(Profit {
            emp: 0.0,
            best_cutoff_fraction: 0.0,
        });
    }
    let pi_bad = params.prior_bad.unwrap_or(n_bad as f64 / bad.len() as f64);
    let pi_good = 1.0 - pi_bad;

    // cutoff candidates: (benefit slope in λ, cost, rejected share)
    let mut candidates = vec![(0.0, 0.0, 0.0)];
    let (mut rb, mut rg) = (0usize, 0usize);
    for (b, g) in tie_groups(scores, bad) {
        rb += b;
        rg += g;
        let fb = rb as f64 / n_bad as f64;
        let fg = rg as f64 / n_good as f64;
        candidates.push((pi_bad * fb, params.roi * pi_good * fg, pi_bad * fb + pi_good * fg));
    }
    let best = |lambda: f64| {
        let mut top = (f64::NEG_INFINITY, 0.0);
        for &(slope, cost, share) in &candidates {
            let p = lambda * slope - cost;
            if p > top.0 {
                top = (p, share);
            }
        }
        top
    };

    let (mut emp, mut fraction) = (0.0, 0.0);
    for (lambda, mass) in [(0.0, params.p0), (1.0, params.p1)] {
        if mass > 0.0 {
            let (p, share) = best(lambda);
            emp += mass * p;
            fraction += mass * share;
        }
    }
    let middle = 1.0 - params.p0 - params.p1;
    if middle > 0.0 {
        let (p, share) = integrate_envelope(&candidates);
        emp += middle * p;
        fraction += middle * share;
    }
    Ok(Profit {
        emp,
        best_cutoff_fraction: fraction,
    })
}

/// All three metrics for one score vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub brier: f64,
    pub profit: f64,
    pub best_cutoff_fraction: f64,
}

pub fn evaluate(scores: &[f64], bad: &[bool], params: &ProfitParams) -> Result<Metrics, EvalError> {
    let profit = profit_measure(scores, bad, params)?;
    Ok(Metrics {
        auc: auc(scores, bad)?,
        brier: brier(scores, bad)?,
        profit: profit.emp,
        best_cutoff_fraction: profit.best_cutoff_fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Mean of `a - b` over folds.
    pub delta: f64,
    /// 95% percentile bootstrap interval for `delta`.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Two-sided p-value for a zero mean difference.
    pub p_value: f64,
}

pub const DEFAULT_BOOTSTRAP_ROUNDS: usize = 10_000;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Paired bootstrap over folds.
///
/// Each round resamples the per-fold differences with replacement. Their
/// means give the percentile interval. For the p-value the same draws get
/// independent random signs, which resamples from the symmetric distribution
/// the differences would have if neither side were better; a round counts as
/// extreme when its absolute mean reaches the observed one.
pub fn compare_models(a: &[f64], b: &[f64], rounds: usize, seed: u64) -> Result<Comparison, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(EvalError::TooFewFolds(a.len()));
    }
    if rounds == 0 {
        return Err(EvalError::InvalidParams("bootstrap rounds must be positive".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    let delta = diffs.iter().sum::<f64>() / n as f64;
    // absorbs rounding in the resampled sums
    let observed = delta.abs() * (1.0 - 1e-12);

    let mut rng = seed::rng(seed);
    let mut means = Vec::with_capacity(rounds);
    let mut extreme = 0usize;
    for _ in 0..rounds {
        let (mut plain, mut signed) = (0.0, 0.0);
        for _ in 0..n {
            let d = diffs[rng.random_range(0..n)];
            plain += d;
            signed += if rng.random::<bool>() { d } else { -d };
        }
        means.push(plain / n as f64);
        if (signed / n as f64).abs() >= observed {
            extreme += 1;
        }
    }
    means.sort_by(f64::total_cmp);
    Ok(Comparison {
        delta,
        ci_low: quantile(&means, 0.025),
        ci_high: quantile(&means, 0.975),
        p_value: (extreme + 1) as f64 / (rounds + 1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn auc_extremes() {
        let bad = [true, true, false, false];
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &bad).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &bad).unwrap(), 0.0);
        assert_eq!(auc(&[0.5; 4], &bad).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(EvalError::SingleClass { .. })));
        assert!(matches!(auc(&[0.1], &[true, false]), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn auc_partial_tie() {
        // pairs: (0.7>0.3) 1, (0.7 vs 0.7) 0.5, (0.3 vs 0.3) 0.5, (0.3<0.7) 0 → 2/4
        assert_eq!(auc(&[0.7, 0.3, 0.3, 0.7], &[true, true, false, false]).unwrap(), 0.5);
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&[1.0, 0.0], &[true, false]).unwrap(), 0.0);
        assert_eq!(brier(&[0.5; 3], &[true, false, true]).unwrap(), 0.25);
        assert!((brier(&[0.8], &[true]).unwrap() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn roc_endpoints() {
        let roc = roc_curve(&[0.9, 0.4, 0.4, 0.1], &[true, false, true, false]).unwrap();
        assert_eq!(roc, vec![(0.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn profit_perfect_ranking_full_loss() {
        let scores = [0.9, 0.8, 0.3, 0.2, 0.1];
        let bad = [true, true, false, false, false];
        let params = ProfitParams {
            roi: 0.4,
            p0: 0.0,
            p1: 1.0,
            prior_bad: None,
        };
        let p = profit_measure(&scores, &bad, &params).unwrap();
        assert!((p.emp - 0.4).abs() < 1e-15);
        assert!((p.best_cutoff_fraction - 0.4).abs() < 1e-15);
    }

    #[test]
    fn profit_without_loss_rejects_nobody() {
        let params = ProfitParams {
            p0: 1.0,
            p1: 0.0,
            ..Default::default()
        };
        let p = profit_measure(&[0.9, 0.1, 0.5], &[true, false, false], &params).unwrap();
        assert_eq!((p.emp, p.best_cutoff_fraction), (0.0, 0.0));
    }

    #[test]
    fn profit_params_validated() {
        let bad = [true, false];
        for params in [
            ProfitParams { roi: 1.0, ..Default::default() },
            ProfitParams { p0: 0.6, p1: 0.5, ..Default::default() },
            ProfitParams { prior_bad: Some(0.0), ..Default::default() },
        ] {
            assert!(matches!(profit_measure(&[0.2, 0.1], &bad, &params), Err(EvalError::InvalidParams(_))));
        }
    }

    #[test]
    fn compare_identical_vectors() {
        let a = [0.7, 0.72, 0.69, 0.71];
        let c = compare_models(&a, &a, 1000, 1).unwrap();
        assert_eq!((c.delta, c.p_value), (0.0, 1.0));
    }

    #[test]
    fn compare_constant_shift() {
        let b: Vec<f64> = (0..10).map(|i| 0.6 + 0.01 * i as f64).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 0.1).collect();
        let c = compare_models(&a, &b, 1000, 1).unwrap();
        assert!((c.delta - 0.1).abs() < 1e-12);
        assert!(c.ci_low > 0.0);
        assert!(c.p_value < 0.01);
    }

    #[test]
    fn compare_is_seeded_and_checks_shape() {
        let a = [0.7, 0.75, 0.71, 0.68, 0.73];
        let b = [0.69, 0.7, 0.72, 0.66, 0.7];
        assert_eq!(compare_models(&a, &b, 500, 3).unwrap(), compare_models(&a, &b, 500, 3).unwrap());
        assert!(matches!(compare_models(&a, &b[..4], 10, 0), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(compare_models(&a[..1], &b[..1], 10, 0), Err(EvalError::TooFewFolds(1))));
    }

    fn scored_sample() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (4usize..60)
            .prop_flat_map(|n| (prop::collection::vec(0u16..1000, n), prop::collection::vec(any::<bool>(), n)))
            .prop_filter("both classes", |(_, b)| b.iter().any(|&x| x) && b.iter().any(|&x| !x))
            .prop_map(|(s, b)| (s.into_iter().map(|v| v as f64 / 1000.0).collect(), b))
    }

    proptest! {
        #[test]
        fn auc_rank_invariant((scores, bad) in scored_sample()) {
            let base = auc(&scores, &bad).unwrap();
            let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s - 7.0).collect();
            prop_assert_eq!(auc(&exp, &bad).unwrap(), base);
            prop_assert_eq!(auc(&affine, &bad).unwrap(), base);
        }

        #[test]
        fn auc_complement((scores, bad) in scored_sample()) {
            let flipped: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
            let sum = auc(&scores, &bad).unwrap() + auc(&flipped, &bad).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn brier_best_constant_is_bad_rate((_, bad) in scored_sample()) {
            let rate = bad.iter().filter(|&&b| b).count() as f64 / bad.len() as f64;
            let at = |c: f64| brier(&vec![c; bad.len()], &bad).unwrap();
            // quadratic in c with vertex at the Bad rate
            let (lo, mid, hi) = (at(0.0), at(0.5), at(1.0));
            let vertex = 0.5 - 0.25 * (hi - lo) / (lo - 2.0 * mid + hi);
            prop_assert!((vertex - rate).abs() < 1e-12);
            prop_assert!(at(rate) <= at(rate + 0.01) && at(rate) <= at(rate - 0.01));
        }

        #[test]
        fn emp_nonnegative((scores, bad) in scored_sample(), roi in 0.01f64..0.99, p0 in 0.0f64..0.5, p1 in 0.0f64..0.5) {
            let params = ProfitParams { roi, p0, p1, prior_bad: None };
            let p = profit_measure(&scores, &bad, &params).unwrap();
            prop_assert!(p.emp >= 0.0);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&p.best_cutoff_fraction));
        }

        #[test]
        fn emp_grows_with_prior_for_perfect_ranking(n_bad in 1usize..20, n_good in 1usize..20, lo in 0.05f64..0.5, step in 0.01f64..0.4) {
            let scores: Vec<f64> = (0..n_bad + n_good).map(|i| -(i as f64)).collect();
            let bad: Vec<bool> = (0..n_bad + n_good).map(|i| i < n_bad).collect();
            let at = |pi: f64| profit_measure(&scores, &bad, &ProfitParams { prior_bad: Some(pi), ..Default::default() }).unwrap().emp;
            prop_assert!(at((lo + step).min(0.99)) >= at(lo));
        }
    }
}
