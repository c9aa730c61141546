//! Small descriptive statistics shared by the data and metrics modules.

/// Quantile of ascending-sorted data by linear interpolation between order
/// statistics at position `(n + 1)·p` (1-based), clamped to the sample range.
///
/// For `{1, …, 8}` this gives 4.5 at p = 0.5 and 6.75 at p = 0.75.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let n = sorted.len();
    let h = (n as f64 + 1.0) * p;
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= n as f64 {
        return sorted[n - 1];
    }
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(values: &[f64]) -> f64 {
    quantile_sorted(&sorted_copy(values), 0.5)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Excess kurtosis (population moments).
pub fn excess_kurtosis(values: &[f64]) -> f64 {
    let m = mean(values);
    let n = values.len() as f64;
    let m2 = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

/// Share of the total held by the largest `frac` of the values.
pub fn top_share(values: &[f64], frac: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let k = ((v.len() as f64 * frac).ceil() as usize).clamp(1, v.len());
    let total: f64 = v.iter().sum();
    v[..k].iter().sum::<f64>() / total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_on_eight_points() {
        let v: Vec<f64> = (1..=8).map(f64::from).collect();
        assert_eq!(quantile_sorted(&v, 0.5), 4.5);
        assert_eq!(quantile_sorted(&v, 0.75), 6.75);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 8.0);
    }

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn top_share_uniform() {
        let v = vec![1.0; 100];
        assert!((top_share(&v, 0.01) - 0.01).abs() < 1e-15);
    }
}
