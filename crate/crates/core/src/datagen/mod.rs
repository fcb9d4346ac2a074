//! Datasets: simulation, CSV round trips and tabular preprocessing.

mod synthetic;
mod tabular;

pub use synthetic::{
    gen_synthetic_main, gen_synthetic_reg, main_dispersion, main_mean, reg_moments, TrueConditional,
    MAIN_CORRELATION, MAIN_SD, MAIN_SIZES, REG_RESPONSE_SHIFT, REG_SD, REG_SIZE,
};
pub use tabular::{load_csv, preprocess_tabular, RawTable, Recipe, TabularEncoder};

use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{DrnError, Result};

/// Column name of the response in dataset CSV files.
pub const RESPONSE_COLUMN: &str = "y";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Full,
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Full => "full",
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

/// Encoded features and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    pub split: SplitTag,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<f64>, feature_names: Vec<String>, split: SplitTag, seed: u64) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(DrnError::Dimension {
                context: "dataset responses",
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if x.ncols() != feature_names.len() {
            return Err(DrnError::Dimension {
                context: "dataset feature names",
                expected: x.ncols(),
                found: feature_names.len(),
            });
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(DrnError::invalid("dataset contains missing or non-finite values"));
        }
        Ok(Self {
            x: x.as_standard_layout().into_owned(),
            y,
            feature_names,
            split,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.x
            .row(i)
            .to_slice()
            .expect("dataset rows are contiguous")
    }

    pub fn select(&self, rows: &[usize], split: SplitTag) -> Self {
        Self {
            x: self.x.select(Axis(0), rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
            split,
            seed: self.seed,
        }
    }

    /// Consecutive train/val/test blocks; the test block takes the rest.
    pub fn split_sequential(&self, n_train: usize, n_val: usize) -> Splits {
        let n = self.len();
        let idx: Vec<usize> = (0..n).collect();
        Splits {
            train: self.select(&idx[..n_train], SplitTag::Train),
            val: self.select(&idx[n_train..n_train + n_val], SplitTag::Val),
            test: self.select(&idx[n_train + n_val..], SplitTag::Test),
        }
    }

    /// The same dataset with `shift` added to every response.
    pub fn shift_response(&self, shift: f64) -> Self {
        Self {
            y: self.y.iter().map(|v| v + shift).collect(),
            ..self.clone()
        }
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write_to(std::fs::File::create(path)?)
    }

    pub fn write_to<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.feature_names.clone();
        header.push(RESPONSE_COLUMN.to_string());
        w.write_record(&header)?;
        for (row, y) in self.x.rows().into_iter().zip(&self.y) {
            let rec: Vec<String> = row.iter().chain(std::iter::once(y)).map(f64::to_string).collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`Dataset::write_csv`]: numeric features and a
    /// `y` column. Lines starting with `#` are skipped.
    pub fn read_csv<P: AsRef<Path>>(path: P, split: SplitTag, seed: u64) -> Result<Self> {
        let table = load_csv(path)?;
        let y_col = table
            .column_index(RESPONSE_COLUMN)
            .ok_or_else(|| DrnError::invalid("dataset CSV has no `y` column"))?;
        let feature_names: Vec<String> = table
            .headers
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != y_col)
            .map(|(_, h)| h.clone())
            .collect();
        let mut x = Array2::zeros((table.rows.len(), feature_names.len()));
        let mut y = Vec::with_capacity(table.rows.len());
        for (i, rec) in table.rows.iter().enumerate() {
            let mut j = 0;
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    DrnError::invalid(format!("row {}, column `{}`: `{field}` is not numeric", i + 2, table.headers[c]))
                })?;
                if c == y_col {
                    y.push(v);
                } else {
                    x[[i, j]] = v;
                    j += 1;
                }
            }
        }
        Self::new(x, y, feature_names, split, seed)
    }
}

/// Sidecar describing how a dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub split_sizes: [usize; 3],
    /// Free-form conventions, e.g. the lognormal parameterization.
    pub conventions: std::collections::BTreeMap<String, String>,
}

impl Splits {
    pub fn meta(&self, source: &str) -> DatasetMeta {
        let mut conventions = std::collections::BTreeMap::new();
        if source == "synthetic_main" {
            conventions.insert("lognormal_second_parameter".into(), "log_sd".into());
        }
        DatasetMeta {
            source: source.to_string(),
            seed: self.train.seed,
            feature_names: self.train.feature_names.clone(),
            split_sizes: [self.train.len(), self.val.len(), self.test.len()],
            conventions,
        }
    }

    pub fn shift_response(&self, shift: f64) -> Self {
        Self {
            train: self.train.shift_response(shift),
            val: self.val.shift_response(shift),
            test: self.test.shift_response(shift),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_round_trip() {
        let d = Dataset::new(
            array![[0.1, -2.5], [1e-17, 3.0]],
            vec![1.25, 0.3],
            vec!["a".into(), "b".into()],
            SplitTag::Train,
            4,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path, SplitTag::Train, 4).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn comment_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "# seed=1\na,y\n2,0.5\n").unwrap();
        let d = Dataset::read_csv(&path, SplitTag::Test, 1).unwrap();
        assert_eq!(d.y, vec![0.5]);
        assert_eq!(d.feature_names, vec!["a".to_string()]);
    }

    #[test]
    fn rejects_missing_values() {
        assert!(Dataset::new(array![[f64::NAN]], vec![1.0], vec!["a".into()], SplitTag::Full, 0).is_err());
        assert!(Dataset::new(array![[1.0]], vec![1.0, 2.0], vec!["a".into()], SplitTag::Full, 0).is_err());
    }

    #[test]
    fn shifting_moves_responses_only() {
        let d = Dataset::new(array![[1.0], [2.0]], vec![-1.0, 0.5], vec!["a".into()], SplitTag::Full, 0).unwrap();
        let s = d.shift_response(5.0);
        assert_eq!(s.y, vec![4.0, 5.5]);
        assert_eq!(s.x, d.x);
    }
}
