//! Brute-force reference implementations. Everything here is quadratic or
//! worse and shares no code with the library metrics.

#![allow(dead_code)]

use rand::Rng;

/// Position of sample `i` when sorted by descending prediction, earlier
/// index first among ties.
fn desc_rank(pred: &[f64], i: usize) -> usize {
    (0..pred.len())
        .filter(|&j| pred[j] > pred[i] || (pred[j] == pred[i] && j < i))
        .count()
}

pub fn gini(pred: &[f64], y: &[f64]) -> f64 {
    let n = y.len();
    let total: f64 = y.iter().sum();
    // Lorenz point after the first m users, for m = 0..=n.
    let lorenz = |m: usize| -> f64 {
        (0..n).filter(|&i| desc_rank(pred, i) < m).map(|i| y[i]).sum::<f64>() / total
    };
    let mut area = 0.0;
    for m in 1..=n {
        area += (lorenz(m - 1) + lorenz(m)) * 0.5 / n as f64;
    }
    2.0 * area - 1.0
}

pub fn average_rank(v: &[f64], i: usize) -> f64 {
    let less = v.iter().filter(|&&x| x < v[i]).count() as f64;
    let equal = v.iter().filter(|&&x| x == v[i]).count() as f64;
    less + (equal + 1.0) / 2.0
}

pub fn spearman(pred: &[f64], y: &[f64]) -> f64 {
    let n = y.len();
    let a: Vec<f64> = (0..n).map(|i| average_rank(pred, i)).collect();
    let b: Vec<f64> = (0..n).map(|i| average_rank(y, i)).collect();
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for i in 0..n {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// (nmae, mape over positive labels, ambe, nrmse).
pub fn regression(pred: &[f64], y: &[f64]) -> (f64, Option<f64>, f64, f64) {
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = pred.iter().sum::<f64>() / n;
    let mae = pred.iter().zip(y).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let mse = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i] > 0.0).collect();
    let mape = (!pos.is_empty()).then(|| {
        pos.iter().map(|&i| (pred[i] - y[i]).abs() / y[i]).sum::<f64>() / pos.len() as f64
    });
    (mae / my, mape, (mp - my).abs(), mse.sqrt() / my)
}

fn is_zero_pred(v: f64, q: Option<f64>) -> bool {
    match q {
        Some(q) => q <= 0.5,
        None => v <= 0.1,
    }
}

pub fn f1(pred: &[f64], y: &[f64], q: Option<&[f64]>) -> f64 {
    let predicted: Vec<usize> = (0..y.len())
        .filter(|&i| !is_zero_pred(pred[i], q.map(|q| q[i])))
        .collect();
    let actual: Vec<usize> = (0..y.len()).filter(|&i| y[i] > 0.0).collect();
    let both = predicted.iter().filter(|i| actual.contains(i)).count() as f64;
    if predicted.is_empty() && actual.is_empty() {
        return 1.0;
    }
    let precision = if predicted.is_empty() { 0.0 } else { both / predicted.len() as f64 };
    let recall = if actual.is_empty() { 0.0 } else { both / actual.len() as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn bucket_acc(pred: &[usize], truth: &[usize]) -> f64 {
    let mut hits = 0.0;
    for i in 0..pred.len() {
        if pred[i] == truth[i] {
            hits += 1.0;
        }
    }
    hits / pred.len() as f64
}

pub fn sva(pred: &[f64], y: &[f64], q: Option<&[f64]>, tau: f64) -> f64 {
    let stratum = |v: f64| if v <= 0.0 { 0 } else if v <= tau { 1 } else { 2 };
    let mut hits = 0.0;
    for i in 0..y.len() {
        let p = if is_zero_pred(pred[i], q.map(|q| q[i])) { 0 } else if pred[i] <= tau { 1 } else { 2 };
        if p == stratum(y[i]) {
            hits += 1.0;
        }
    }
    hits / y.len() as f64
}

pub fn recall_at_k(pred: &[f64], whale: &[bool], k: usize) -> f64 {
    let whales = whale.iter().filter(|&&w| w).count() as f64;
    let caught = (0..pred.len())
        .filter(|&i| whale[i] && desc_rank(pred, i) < k)
        .count() as f64;
    caught / whales
}

/// A value drawn from a small grid half the time, so ties and zeros are common.
pub fn tied_value<R: Rng>(rng: &mut R) -> f64 {
    match rng.random_range(0..4) {
        0 => 0.0,
        1 => rng.random_range(0..5) as f64,
        _ => rng.random_range(0.0..20.0),
    }
}
