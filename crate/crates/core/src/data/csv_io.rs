//! CSV ingestion and export.
//!
//! Header columns are `num_*` (decimal reals), `cat_*` (non-negative
//! integers) and exactly one `label` (non-negative real). A categorical header
//! may declare its cardinality as `cat_name:N`; without it the cardinality is
//! one past the largest code. Reals are written in shortest round-trip form,
//! so write-then-load is bit-exact.

use std::path::Path;

use super::{Column, ColumnKind, Dataset};
use crate::error::{LtvError, Result};
use crate::nn::Matrix;

pub const LABEL_COLUMN: &str = "label";

pub fn format_real(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path)?;
    let mut cards = ds.cardinalities.iter();
    let mut header: Vec<String> = ds
        .columns
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Numeric => c.name.clone(),
            ColumnKind::Categorical => format!("{}:{}", c.name, cards.next().expect("validated")),
        })
        .collect();
    header.push(LABEL_COLUMN.to_string());
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..ds.len() {
        record.clear();
        let (mut num_j, mut cat_j) = (0, 0);
        for col in &ds.columns {
            match col.kind {
                ColumnKind::Numeric => {
                    record.push(format_real(ds.numeric.get(i, num_j)));
                    num_j += 1;
                }
                ColumnKind::Categorical => {
                    record.push(ds.categorical[cat_j][i].to_string());
                    cat_j += 1;
                }
            }
        }
        record.push(format_real(ds.labels[i]));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    parse_records(&header, rdr.records())
}

/// Parses CSV text already in memory.
pub fn parse_csv_str(text: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    parse_records(&header, rdr.records())
}

enum Slot {
    Numeric(usize),
    Categorical(usize),
    Label,
}

fn parse_records<I>(header: &csv::StringRecord, records: I) -> Result<Dataset>
where
    I: Iterator<Item = std::result::Result<csv::StringRecord, csv::Error>>,
{
    let mut columns = Vec::new();
    let mut slots = Vec::new();
    let mut declared: Vec<Option<usize>> = Vec::new();
    let (mut n_num, mut n_cat, mut label_seen) = (0, 0, false);
    for name in header.iter() {
        if name == LABEL_COLUMN {
            if label_seen {
                return Err(LtvError::Schema("duplicate label column".into()));
            }
            label_seen = true;
            slots.push(Slot::Label);
        } else if name.starts_with("num_") {
            columns.push(Column {
                name: name.to_string(),
                kind: ColumnKind::Numeric,
            });
            slots.push(Slot::Numeric(n_num));
            n_num += 1;
        } else if name.starts_with("cat_") {
            let (name, card) = match name.split_once(':') {
                Some((base, n)) => {
                    let n: usize = n.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
                        LtvError::Schema(format!("column {name:?} declares an invalid cardinality"))
                    })?;
                    (base, Some(n))
                }
                None => (name, None),
            };
            declared.push(card);
            columns.push(Column {
                name: name.to_string(),
                kind: ColumnKind::Categorical,
            });
            slots.push(Slot::Categorical(n_cat));
            n_cat += 1;
        } else {
            return Err(LtvError::Schema(format!(
                "column {name:?} has no num_/cat_ prefix"
            )));
        }
    }
    if !label_seen {
        return Err(LtvError::Schema("missing label column".into()));
    }

    let mut numeric = Vec::new();
    let mut categorical = vec![Vec::new(); n_cat];
    let mut labels = Vec::new();
    for (line, rec) in records.enumerate() {
        let rec = rec?;
        let row = line + 2;
        let mut num_row = vec![0.0; n_num];
        for (field, slot) in rec.iter().zip(&slots) {
            match *slot {
                Slot::Numeric(j) => {
                    num_row[j] = parse_real(field, row)?;
                }
                Slot::Categorical(j) => {
                    let code: usize = field.trim().parse().map_err(|_| {
                        LtvError::input(format!(
                            "row {row}: categorical value {field:?} is not a non-negative integer"
                        ))
                    })?;
                    categorical[j].push(code);
                }
                Slot::Label => {
                    let y = parse_real(field, row)?;
                    if y < 0.0 {
                        return Err(LtvError::input(format!("row {row}: negative label {y}")));
                    }
                    labels.push(y);
                }
            }
        }
        numeric.extend(num_row);
    }
    let n = labels.len();
    let cardinalities = categorical
        .iter()
        .zip(&declared)
        .map(|(c, d)| d.unwrap_or_else(|| c.iter().max().map_or(1, |m| m + 1)))
        .collect();
    Dataset::new(
        columns,
        Matrix::from_vec(n, n_num, numeric)?,
        categorical,
        cardinalities,
        labels,
    )
}

fn parse_real(field: &str, row: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| LtvError::input(format!("row {row}: {field:?} is not a real number")))?;
    if !v.is_finite() {
        return Err(LtvError::input(format!("row {row}: non-finite value {field:?}")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_by_prefix() {
        let ds = parse_csv_str("num_a,cat_b,label\n1.5,2,0.0\n").unwrap();
        assert_eq!(ds.n_numeric(), 1);
        assert_eq!(ds.n_categorical(), 1);
        assert_eq!(ds.labels, vec![0.0]);
        assert_eq!(ds.numeric.get(0, 0), 1.5);
        assert_eq!(ds.categorical[0], vec![2]);
        assert_eq!(ds.cardinalities, vec![3]);
        let ds = parse_csv_str("cat_b:10,label\n2,1.0\n").unwrap();
        assert_eq!(ds.columns[0].name, "cat_b");
        assert_eq!(ds.cardinalities, vec![10]);
        assert!(parse_csv_str("cat_b:2,label\n2,1.0\n").is_err());
        assert!(parse_csv_str("cat_b:x,label\n2,1.0\n").is_err());
    }

    #[test]
    fn rejects_domain_violations() {
        assert!(matches!(
            parse_csv_str("num_a,label\n1.0,-1\n"),
            Err(LtvError::Input(_))
        ));
        assert!(matches!(
            parse_csv_str("num_a,cat_b,label\n1.0,1.5,2\n"),
            Err(LtvError::Input(_))
        ));
        assert!(matches!(
            parse_csv_str("num_a,cat_b,label\n1.0,-1,2\n"),
            Err(LtvError::Input(_))
        ));
        assert!(matches!(
            parse_csv_str("x_a,label\n1.0,2\n"),
            Err(LtvError::Schema(_))
        ));
        assert!(matches!(parse_csv_str("num_a\n1.0\n"), Err(LtvError::Schema(_))));
        assert!(parse_csv_str("num_a,label\nnan,1\n").is_err());
    }

    #[test]
    fn label_may_sit_anywhere() {
        let ds = parse_csv_str("label,cat_x,num_y\n3.25,0,-1e-7\n").unwrap();
        assert_eq!(ds.labels, vec![3.25]);
        assert_eq!(ds.numeric.get(0, 0), -1e-7);
    }

    #[test]
    fn real_formatting_round_trips() {
        for &v in &[0.0, 1.0 / 3.0, 1e-300, 123456789.12345679, f64::MAX, 5e-324] {
            let s = format_real(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }
}
