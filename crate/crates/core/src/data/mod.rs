//! Datasets: synthetic generation, CSV ingestion, bucketization, splitting.

pub mod buckets;
pub mod csv_io;
pub mod generator;
pub mod split;
pub mod stats;

pub use buckets::{fit_bucket_spec, BucketSpec, ZERO_TOLERANCE};
pub use csv_io::{load_csv, write_csv};
pub use generator::{generate, GeneratorConfig, GeneratorStats};
pub use split::chronological_split;

use serde::{Deserialize, Serialize};

use crate::error::{LtvError, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// Feature rows plus non-negative labels. Row order is chronological.
///
/// Numeric columns are stored together in `numeric` (one matrix column per
/// numeric schema column, in schema order); categorical columns are stored
/// column-wise in `categorical`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: Vec<Column>,
    pub numeric: Matrix,
    pub categorical: Vec<Vec<usize>>,
    pub cardinalities: Vec<usize>,
    pub labels: Vec<f64>,
}

impl Dataset {
    /// Validates the invariants: labels finite and non-negative, codes below
    /// their cardinality, consistent lengths.
    pub fn new(
        columns: Vec<Column>,
        numeric: Matrix,
        categorical: Vec<Vec<usize>>,
        cardinalities: Vec<usize>,
        labels: Vec<f64>,
    ) -> Result<Self> {
        let n = labels.len();
        let n_num = columns.iter().filter(|c| c.kind == ColumnKind::Numeric).count();
        let n_cat = columns.len() - n_num;
        if numeric.rows() != n || numeric.cols() != n_num {
            return Err(LtvError::input("numeric block does not match the schema"));
        }
        if categorical.len() != n_cat || cardinalities.len() != n_cat {
            return Err(LtvError::input("categorical block does not match the schema"));
        }
        for (codes, &card) in categorical.iter().zip(&cardinalities) {
            if codes.len() != n {
                return Err(LtvError::input("categorical column length mismatch"));
            }
            if let Some(bad) = codes.iter().find(|&&c| c >= card) {
                return Err(LtvError::input(format!(
                    "categorical code {bad} exceeds cardinality {card}"
                )));
            }
        }
        if let Some(bad) = labels.iter().find(|y| !y.is_finite() || **y < 0.0) {
            return Err(LtvError::input(format!("invalid label {bad}")));
        }
        if !numeric.all_finite() {
            return Err(LtvError::input("non-finite numeric feature"));
        }
        Ok(Dataset {
            columns,
            numeric,
            categorical,
            cardinalities,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_numeric(&self) -> usize {
        self.numeric.cols()
    }

    pub fn n_categorical(&self) -> usize {
        self.categorical.len()
    }

    /// Rows picked by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            columns: self.columns.clone(),
            numeric: self.numeric.select_rows(idx),
            categorical: self
                .categorical
                .iter()
                .map(|col| idx.iter().map(|&i| col[i]).collect())
                .collect(),
            cardinalities: self.cardinalities.clone(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        let idx: Vec<usize> = range.collect();
        self.select(&idx)
    }
}
