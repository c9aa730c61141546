use super::Dataset;
use crate::error::{LtvError, Result};

/// Contiguous train / validation / test split by row order.
///
/// Test and validation sizes are `floor(n·frac)`; train takes the remainder.
/// Every part must be non-empty.
pub fn chronological_split(
    ds: &Dataset,
    test_frac: f64,
    val_frac: f64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (n_train, n_val, n_test) = split_sizes(ds.len(), test_frac, val_frac)?;
    Ok((
        ds.slice(0..n_train),
        ds.slice(n_train..n_train + n_val),
        ds.slice(n_train + n_val..n_train + n_val + n_test),
    ))
}

pub fn split_sizes(n: usize, test_frac: f64, val_frac: f64) -> Result<(usize, usize, usize)> {
    if !(test_frac > 0.0 && test_frac < 1.0) || !(0.0..1.0).contains(&val_frac) {
        return Err(LtvError::input(format!(
            "invalid split fractions test={test_frac} val={val_frac}"
        )));
    }
    if test_frac + val_frac >= 1.0 {
        return Err(LtvError::input("split fractions leave no training rows"));
    }
    let n_test = (n as f64 * test_frac).floor() as usize;
    let n_val = (n as f64 * val_frac).floor() as usize;
    let n_train = n.saturating_sub(n_test + n_val);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(LtvError::input(format!(
            "split of {n} rows leaves an empty part ({n_train}/{n_val}/{n_test})"
        )));
    }
    Ok((n_train, n_val, n_test))
}
