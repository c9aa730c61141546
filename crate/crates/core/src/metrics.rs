//! Ranking, regression and stratification metrics.
//!
//! Sorting-based metrics break ties by input order, so every value is a
//! deterministic function of its inputs.

use serde::{Deserialize, Serialize};

use crate::error::{LtvError, Result};

/// Threshold on predicted values used as the zero rule when a model exposes
/// no non-zero probability.
pub const ZERO_VALUE_THRESHOLD: f64 = 0.1;
/// Threshold on the non-zero probability.
pub const ZERO_PROB_THRESHOLD: f64 = 0.5;

fn check_pairs(pred: &[f64], y: &[f64]) -> Result<()> {
    if pred.len() != y.len() {
        return Err(LtvError::input(format!(
            "prediction/label length mismatch: {} vs {}",
            pred.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(LtvError::input("metrics need at least one sample"));
    }
    Ok(())
}

/// Indices ordered by descending prediction; ties keep input order.
pub fn descending_order(pred: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pred.len()).collect();
    idx.sort_by(|&a, &b| pred[b].total_cmp(&pred[a]));
    idx
}

/// Lorenz-curve Gini: users sorted by descending prediction, cumulative share
/// of true value against user fraction from the origin, `2·area − 1`.
pub fn gini(pred: &[f64], y: &[f64]) -> Result<f64> {
    check_pairs(pred, y)?;
    let total: f64 = y.iter().sum();
    if !(total > 0.0) {
        return Err(LtvError::input("gini needs a positive label sum"));
    }
    let n = y.len() as f64;
    let mut area = 0.0;
    let mut prev = 0.0;
    let mut cum = 0.0;
    for i in descending_order(pred) {
        cum += y[i];
        let cur = cum / total;
        area += (prev + cur) / 2.0;
        prev = cur;
    }
    Ok(2.0 * area / n - 1.0)
}

/// Gini divided by the Gini of the perfect ordering.
pub fn gini_normalized(pred: &[f64], y: &[f64]) -> Result<f64> {
    let best = gini(y, y)?;
    if best == 0.0 {
        return Err(LtvError::input("normalized gini undefined for constant labels"));
    }
    Ok(gini(pred, y)? / best)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(LtvError::input("correlation undefined: zero variance"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman correlation: Pearson on average ranks.
pub fn spearman(pred: &[f64], y: &[f64]) -> Result<f64> {
    check_pairs(pred, y)?;
    if y.len() < 2 {
        return Err(LtvError::input("spearman needs at least two samples"));
    }
    pearson(&average_ranks(pred), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionErrors {
    pub nmae: f64,
    /// Undefined when no label is positive.
    pub mape: Option<f64>,
    pub ambe: f64,
    pub nrmse: f64,
}

pub fn regression_errors(pred: &[f64], y: &[f64]) -> Result<RegressionErrors> {
    check_pairs(pred, y)?;
    let n = y.len() as f64;
    let mean_y = y.iter().sum::<f64>() / n;
    if !(mean_y > 0.0) {
        return Err(LtvError::input("normalized errors need a positive label mean"));
    }
    let mean_p = pred.iter().sum::<f64>() / n;
    let mae = pred.iter().zip(y).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let mse = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let (mut ape, mut pos) = (0.0, 0usize);
    for (p, t) in pred.iter().zip(y) {
        if *t > 0.0 {
            ape += (p - t).abs() / t;
            pos += 1;
        }
    }
    Ok(RegressionErrors {
        nmae: mae / mean_y,
        mape: (pos > 0).then(|| ape / pos as f64),
        ambe: (mean_p - mean_y).abs(),
        nrmse: mse.sqrt() / mean_y,
    })
}

/// Signed bias `mean(ŷ) − mean(y)`.
pub fn mean_bias(pred: &[f64], y: &[f64]) -> Result<f64> {
    check_pairs(pred, y)?;
    let n = y.len() as f64;
    Ok((pred.iter().sum::<f64>() - y.iter().sum::<f64>()) / n)
}

/// Value strata used by SVA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Zero,
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrataSpec {
    /// Median of the positive training labels.
    pub tau_low: f64,
}

impl StrataSpec {
    pub fn new(tau_low: f64) -> Result<Self> {
        if !(tau_low > 0.0) || !tau_low.is_finite() {
            return Err(LtvError::input("tau_low must be positive and finite"));
        }
        Ok(StrataSpec { tau_low })
    }

    pub fn true_stratum(&self, y: f64) -> Stratum {
        if y <= 0.0 {
            Stratum::Zero
        } else if y <= self.tau_low {
            Stratum::Low
        } else {
            Stratum::High
        }
    }

    /// Zero when the non-zero probability is at most 0.5 (or, without a
    /// probability, when the value is at most 0.1); otherwise by value.
    pub fn predicted_stratum(&self, value: f64, nonzero_prob: Option<f64>) -> Stratum {
        if predicted_zero(value, nonzero_prob) {
            Stratum::Zero
        } else if value <= self.tau_low {
            Stratum::Low
        } else {
            Stratum::High
        }
    }
}

pub fn predicted_zero(value: f64, nonzero_prob: Option<f64>) -> bool {
    match nonzero_prob {
        Some(p) => p <= ZERO_PROB_THRESHOLD,
        None => value <= ZERO_VALUE_THRESHOLD,
    }
}

/// F1 of the non-zero class; 1 when there are neither true nor predicted positives.
pub fn f1_nonzero(pred: &[f64], y: &[f64], nonzero_prob: Option<&[f64]>) -> Result<f64> {
    check_pairs(pred, y)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for i in 0..y.len() {
        let p = !predicted_zero(pred[i], nonzero_prob.map(|q| q[i]));
        let t = y[i] > 0.0;
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 })
}

pub fn bucket_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(LtvError::input("bucket accuracy needs equal, non-empty inputs"));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Stratified value accuracy.
pub fn sva(pred: &[f64], y: &[f64], nonzero_prob: Option<&[f64]>, strata: &StrataSpec) -> Result<f64> {
    check_pairs(pred, y)?;
    let hits = (0..y.len())
        .filter(|&i| {
            strata.predicted_stratum(pred[i], nonzero_prob.map(|q| q[i])) == strata.true_stratum(y[i])
        })
        .count();
    Ok(hits as f64 / y.len() as f64)
}

/// Fraction of true whales among the `k` highest predictions.
pub fn recall_at_k(pred: &[f64], is_whale: &[bool], k: usize) -> Result<f64> {
    if pred.len() != is_whale.len() {
        return Err(LtvError::input("recall@k length mismatch"));
    }
    if k > pred.len() {
        return Err(LtvError::input(format!("k = {k} exceeds n = {}", pred.len())));
    }
    let whales = is_whale.iter().filter(|&&w| w).count();
    if whales == 0 {
        return Err(LtvError::input("recall@k needs at least one whale"));
    }
    let hit = descending_order(pred)[..k].iter().filter(|&&i| is_whale[i]).count();
    Ok(hit as f64 / whales as f64)
}

/// Chi-squared distance `Σ (q̂_k − q_k)² / q_k` between the predicted and
/// true bucket histograms; empty true buckets are skipped.
pub fn bucket_chi_squared(pred: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(LtvError::input("chi-squared needs equal, non-empty inputs"));
    }
    let n = pred.len() as f64;
    let mut qp = vec![0.0; k];
    let mut qt = vec![0.0; k];
    for (&a, &b) in pred.iter().zip(truth) {
        if a >= k || b >= k {
            return Err(LtvError::input("bucket index out of range"));
        }
        qp[a] += 1.0 / n;
        qt[b] += 1.0 / n;
    }
    Ok(qp
        .iter()
        .zip(&qt)
        .filter(|(_, &t)| t > 0.0)
        .map(|(p, t)| (p - t) * (p - t) / t)
        .sum())
}

/// Everything `full_report` needs about one evaluation split.
#[derive(Debug, Clone, Copy)]
pub struct EvalInput<'a> {
    pub pred: &'a [f64],
    pub y: &'a [f64],
    pub nonzero_prob: Option<&'a [f64]>,
    pub pred_buckets: &'a [usize],
    pub true_buckets: &'a [usize],
    /// Index of the top bucket (whales).
    pub top_bucket: usize,
    pub strata: StrataSpec,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub gini: Option<f64>,
    pub gini_normalized: Option<f64>,
    pub gini_nonzero: Option<f64>,
    pub spearman: Option<f64>,
    pub spearman_nonzero: Option<f64>,
    pub nmae: Option<f64>,
    pub mape: Option<f64>,
    pub ambe: Option<f64>,
    pub nrmse: Option<f64>,
    pub f1_zero: Option<f64>,
    pub bucket_acc: Option<f64>,
    pub sva: Option<f64>,
    pub recall_at_k: Option<f64>,
    pub k: usize,
    /// AMBE over the samples whose true bucket is the top one.
    pub top_bucket_ambe: Option<f64>,
    pub top_bucket_bias: Option<f64>,
    pub chi_squared: Option<f64>,
}

fn soft<T>(name: &str, r: Result<T>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            log::debug!("metric {name} undefined: {e}");
            None
        }
    }
}

/// Computes every metric; failures become `None` instead of aborting.
pub fn full_report(input: &EvalInput<'_>) -> Result<MetricsReport> {
    let EvalInput {
        pred,
        y,
        nonzero_prob,
        pred_buckets,
        true_buckets,
        top_bucket,
        strata,
        k,
    } = *input;
    check_pairs(pred, y)?;
    if pred_buckets.len() != y.len() || true_buckets.len() != y.len() {
        return Err(LtvError::input("bucket vectors must match the sample count"));
    }
    if nonzero_prob.is_some_and(|q| q.len() != y.len()) {
        return Err(LtvError::input("nonzero_prob must match the sample count"));
    }
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i] > 0.0).collect();
    let pick = |v: &[f64], idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| v[i]).collect() };
    let (pred_pos, y_pos) = (pick(pred, &pos), pick(y, &pos));
    let errs = soft("regression", regression_errors(pred, y));
    let top: Vec<usize> = (0..y.len()).filter(|&i| true_buckets[i] == top_bucket).collect();
    let top_bias = soft("top_bucket_bias", mean_bias(&pick(pred, &top), &pick(y, &top)));
    let whales: Vec<bool> = true_buckets.iter().map(|&b| b == top_bucket).collect();
    Ok(MetricsReport {
        n: y.len(),
        gini: soft("gini", gini(pred, y)),
        gini_normalized: soft("gini_normalized", gini_normalized(pred, y)),
        gini_nonzero: soft("gini_nonzero", gini(&pred_pos, &y_pos)),
        spearman: soft("spearman", spearman(pred, y)),
        spearman_nonzero: soft("spearman_nonzero", spearman(&pred_pos, &y_pos)),
        nmae: errs.map(|e| e.nmae),
        mape: errs.and_then(|e| e.mape),
        ambe: errs.map(|e| e.ambe),
        nrmse: errs.map(|e| e.nrmse),
        f1_zero: soft("f1", f1_nonzero(pred, y, nonzero_prob)),
        bucket_acc: soft("bucket_acc", bucket_accuracy(pred_buckets, true_buckets)),
        sva: soft("sva", sva(pred, y, nonzero_prob, &strata)),
        recall_at_k: soft("recall_at_k", recall_at_k(pred, &whales, k.min(y.len()))),
        k: k.min(y.len()),
        top_bucket_ambe: top_bias.map(f64::abs),
        top_bucket_bias: top_bias,
        chi_squared: soft(
            "chi_squared",
            bucket_chi_squared(pred_buckets, true_buckets, top_bucket + 1),
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_examples() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert!((gini(&y, &y).unwrap() - 0.25).abs() < 1e-15);
        assert!((gini(&[4.0, 3.0, 2.0, 1.0], &y).unwrap() + 0.25).abs() < 1e-15);
        assert_eq!(gini(&[3.0], &[7.0]).unwrap(), 0.0);
        assert!(gini(&[1.0, 2.0], &[0.0, 0.0]).is_err());
        assert!((gini_normalized(&y, &y).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spearman_examples() {
        let y = [1.0, 5.0, 2.0, 9.0];
        assert!((spearman(&[0.1, 0.7, 0.3, 2.0], &y).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[-0.1, -0.7, -0.3, -2.0], &y).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        // Ranks (1, 2.5, 2.5, 4) vs (1, 3, 2, 4): co-moment 4.5, squared deviations 4.5 and 5.
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 4.5 / (4.5f64 * 5.0).sqrt()).abs() < 1e-15);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn regression_examples() {
        let e = regression_errors(&[2.0, 2.0], &[1.0, 3.0]).unwrap();
        assert_eq!(e.nmae, 0.5);
        assert_eq!(e.ambe, 0.0);
        assert_eq!(e.nrmse, 0.5);
        assert!((e.mape.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let same = regression_errors(&[0.0, 3.5], &[0.0, 3.5]).unwrap();
        assert_eq!((same.nmae, same.mape, same.ambe, same.nrmse), (0.0, Some(0.0), 0.0, 0.0));
        let shifted = regression_errors(&[1.5, 3.5], &[1.0, 3.0]).unwrap();
        assert!((shifted.ambe - 0.5).abs() < 1e-15);
    }

    #[test]
    fn stratification_examples() {
        let s = StrataSpec::new(1.0).unwrap();
        let y = [0.0, 1.0, 10.0];
        assert!((sva(&[0.0, 0.5, 0.9], &y, None, &s).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(predicted_zero(0.05, None));
        assert!(!predicted_zero(0.05, Some(0.9)));
        assert_eq!(sva(&y, &y, None, &s).unwrap(), 1.0);
        assert_eq!(f1_nonzero(&y, &y, None).unwrap(), 1.0);
        assert_eq!(f1_nonzero(&[0.0], &[0.0], None).unwrap(), 1.0);
    }

    #[test]
    fn recall_examples() {
        let whales = [false, true, false, true];
        assert_eq!(recall_at_k(&[1.0, 2.0, 3.0, 4.0], &whales, 4).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[0.0, 5.0, 1.0, 6.0], &whales, 2).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[1.0; 4], &whales, 2).unwrap(), 0.5);
        assert!(recall_at_k(&[1.0], &[false], 1).is_err());
    }

    #[test]
    fn chi_squared_zero_on_match() {
        assert_eq!(bucket_chi_squared(&[0, 1, 2], &[2, 1, 0], 3).unwrap(), 0.0);
        let c = bucket_chi_squared(&[0, 0], &[0, 1], 2).unwrap();
        assert!((c - (0.25 / 0.5 + 0.25 / 0.5)).abs() < 1e-15);
    }

    #[test]
    fn perfect_report() {
        let y = [0.0, 0.5, 3.0, 8.0, 0.0, 20.0];
        let b = [0, 1, 2, 3, 0, 3];
        let r = full_report(&EvalInput {
            pred: &y,
            y: &y,
            nonzero_prob: None,
            pred_buckets: &b,
            true_buckets: &b,
            top_bucket: 3,
            strata: StrataSpec::new(1.0).unwrap(),
            k: 2,
        })
        .unwrap();
        assert_eq!(r.spearman, Some(1.0));
        assert_eq!(r.sva, Some(1.0));
        assert_eq!(r.nmae, Some(0.0));
        assert_eq!(r.recall_at_k, Some(1.0));
        assert_eq!(r.gini, gini(&y, &y).ok());
        assert_eq!(r.top_bucket_ambe, Some(0.0));
        assert_eq!(r.chi_squared, Some(0.0));
    }
}
