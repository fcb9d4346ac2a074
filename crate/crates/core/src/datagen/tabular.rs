//! Raw CSV ingestion and recipe-driven encoding of mixed-type tables.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, SplitTag, Splits};
use crate::error::{DrnError, Result};

/// A CSV file as strings.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

/// Reads a headed CSV, skipping lines that start with `#`.
pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<RawTable> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let headers = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(RawTable { headers, rows })
}

fn default_scale() -> f64 {
    1.0
}

fn default_split() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

fn default_true() -> bool {
    true
}

/// Column roles and transformations for a raw table.
///
/// Every column of the table must be named exactly once across `response`,
/// `drop`, `numeric`, `categorical` and `ordinal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub response: String,
    /// Multiplier applied to the response.
    #[serde(default = "default_scale")]
    pub response_scale: f64,
    /// Keep only rows with a strictly positive response.
    #[serde(default)]
    pub positive_response_only: bool,
    #[serde(default)]
    pub drop: Vec<String>,
    #[serde(default)]
    pub numeric: Vec<String>,
    /// One-hot encoded, first level (in sorted order) dropped.
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Level-to-value maps applied verbatim.
    #[serde(default)]
    pub ordinal: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Standardize numeric and ordinal features with train-split statistics.
    #[serde(default = "default_true")]
    pub standardize: bool,
}

impl Recipe {
    fn check_columns(&self, table: &RawTable) -> Result<()> {
        let mut seen = BTreeSet::new();
        let named = std::iter::once(&self.response)
            .chain(&self.drop)
            .chain(&self.numeric)
            .chain(&self.categorical)
            .chain(self.ordinal.keys());
        for name in named {
            if !seen.insert(name.as_str()) {
                return Err(DrnError::invalid(format!("recipe names column `{name}` twice")));
            }
            if table.column_index(name).is_none() {
                return Err(DrnError::invalid(format!("recipe column `{name}` not found in CSV")));
            }
        }
        if let Some(h) = table.headers.iter().find(|h| !seen.contains(h.as_str())) {
            return Err(DrnError::invalid(format!("CSV column `{h}` has no role in the recipe")));
        }
        let total: f64 = self.split.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.split.iter().any(|&f| f <= 0.0) {
            return Err(DrnError::invalid("split fractions must be positive and sum to 1"));
        }
        Ok(())
    }
}

/// One encoded feature block in output order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Block {
    Numeric { column: String, mean: f64, sd: f64 },
    Ordinal { column: String, mean: f64, sd: f64 },
    /// `levels[0]` is the dropped reference level.
    Categorical { column: String, levels: Vec<String> },
}

/// Encoder fitted on a training split; serializable as dataset metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularEncoder {
    recipe: Recipe,
    blocks: Vec<Block>,
    feature_names: Vec<String>,
}

fn parse_number(field: &str, column: &str, row: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| DrnError::invalid(format!("row {row}, column `{column}`: `{field}` is not numeric")))
}

impl TabularEncoder {
    /// Fits level sets and standardization statistics on `rows` of `table`.
    pub fn fit(recipe: &Recipe, table: &RawTable, rows: &[usize]) -> Result<Self> {
        recipe.check_columns(table)?;
        let mut blocks = Vec::new();
        let mut feature_names = Vec::new();
        let stats = |values: &[f64]| {
            let n = values.len().max(1) as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            if recipe.standardize {
                (mean, sd)
            } else {
                (0.0, 1.0)
            }
        };
        for (j, name) in table.headers.iter().enumerate() {
            if recipe.numeric.contains(name) {
                let vals = rows
                    .iter()
                    .map(|&i| parse_number(&table.rows[i][j], name, i + 2))
                    .collect::<Result<Vec<_>>>()?;
                let (mean, sd) = stats(&vals);
                blocks.push(Block::Numeric { column: name.clone(), mean, sd });
                feature_names.push(name.clone());
            } else if let Some(map) = recipe.ordinal.get(name) {
                let vals = rows
                    .iter()
                    .map(|&i| {
                        let field = table.rows[i][j].trim();
                        map.get(field).copied().ok_or_else(|| {
                            DrnError::invalid(format!("row {}, column `{name}`: unmapped level `{field}`", i + 2))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (mean, sd) = stats(&vals);
                blocks.push(Block::Ordinal { column: name.clone(), mean, sd });
                feature_names.push(name.clone());
            } else if recipe.categorical.contains(name) {
                let levels: BTreeSet<String> = rows.iter().map(|&i| table.rows[i][j].trim().to_string()).collect();
                let levels: Vec<String> = levels.into_iter().collect();
                for level in &levels[1..] {
                    feature_names.push(format!("{name}_{level}"));
                }
                blocks.push(Block::Categorical { column: name.clone(), levels });
            }
        }
        Ok(Self {
            recipe: recipe.clone(),
            blocks,
            feature_names,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Original column behind each encoded feature.
    pub fn feature_groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut next = 0;
        for b in &self.blocks {
            let (column, width) = match b {
                Block::Numeric { column, .. } | Block::Ordinal { column, .. } => (column, 1),
                Block::Categorical { column, levels } => (column, levels.len() - 1),
            };
            out.push((column.clone(), (next..next + width).collect()));
            next += width;
        }
        out
    }

    /// Encodes `rows` of `table`; unseen categorical levels become all zeros.
    pub fn encode(&self, table: &RawTable, rows: &[usize], split: SplitTag, seed: u64) -> Result<Dataset> {
        let resp = table
            .column_index(&self.recipe.response)
            .ok_or_else(|| DrnError::invalid(format!("response column `{}` missing", self.recipe.response)))?;
        let mut x = Array2::zeros((rows.len(), self.feature_names.len()));
        let mut y = Vec::with_capacity(rows.len());
        for (r, &i) in rows.iter().enumerate() {
            let rec = &table.rows[i];
            y.push(parse_number(&rec[resp], &self.recipe.response, i + 2)? * self.recipe.response_scale);
            let mut col = 0;
            for b in &self.blocks {
                match b {
                    Block::Numeric { column, mean, sd } => {
                        let j = table.column_index(column).expect("fitted column");
                        x[[r, col]] = (parse_number(&rec[j], column, i + 2)? - mean) / sd;
                        col += 1;
                    }
                    Block::Ordinal { column, mean, sd } => {
                        let j = table.column_index(column).expect("fitted column");
                        let field = rec[j].trim();
                        let v = self.recipe.ordinal[column].get(field).copied().ok_or_else(|| {
                            DrnError::invalid(format!("row {}, column `{column}`: unmapped level `{field}`", i + 2))
                        })?;
                        x[[r, col]] = (v - mean) / sd;
                        col += 1;
                    }
                    Block::Categorical { column, levels } => {
                        let j = table.column_index(column).expect("fitted column");
                        let field = rec[j].trim();
                        match levels.iter().position(|l| l == field) {
                            Some(0) => {}
                            Some(k) => x[[r, col + k - 1]] = 1.0,
                            None => log::warn!("row {}: unseen level `{field}` of `{column}` encoded as zeros", i + 2),
                        }
                        col += levels.len() - 1;
                    }
                }
            }
        }
        Dataset::new(x, y, self.feature_names.clone(), split, seed)
    }
}

/// Filters, shuffles with `seed`, splits, fits the encoder on the training
/// rows and encodes all three splits.
pub fn preprocess_tabular(table: &RawTable, recipe: &Recipe, seed: u64) -> Result<(Splits, TabularEncoder)> {
    recipe.check_columns(table)?;
    let resp = table.column_index(&recipe.response).expect("checked above");
    let mut rows = Vec::with_capacity(table.rows.len());
    for (i, rec) in table.rows.iter().enumerate() {
        let y = parse_number(&rec[resp], &recipe.response, i + 2)?;
        if !recipe.positive_response_only || y > 0.0 {
            rows.push(i);
        }
    }
    if rows.len() < 3 {
        return Err(DrnError::invalid("too few rows to split"));
    }
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = rows.len();
    let n_train = ((n as f64) * recipe.split[0]).round() as usize;
    let n_val = ((n as f64) * recipe.split[1]).round() as usize;
    let (train, rest) = rows.split_at(n_train.min(n));
    let (val, test) = rest.split_at(n_val.min(rest.len()));
    let encoder = TabularEncoder::fit(recipe, table, train)?;
    let splits = Splits {
        train: encoder.encode(table, train, SplitTag::Train, seed)?,
        val: encoder.encode(table, val, SplitTag::Val, seed)?,
        test: encoder.encode(table, test, SplitTag::Test, seed)?,
    };
    Ok((splits, encoder))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> RawTable {
        let rows = [
            ("0.5", "6-7", "1-130 km/h", "M", "1200", "x"),
            ("0.2", "10+", "130-140 km/h", "F", "0", "x"),
            ("1.0", "0", "1-130 km/h", "F", "3500", "y"),
            ("0.7", "6-7", "130-140 km/h", "M", "800", "y"),
            ("0.9", "10+", "1-130 km/h", "F", "2200", "z"),
            ("0.3", "0", "130-140 km/h", "M", "150", "x"),
        ];
        RawTable {
            headers: ["Exposure", "VehAge", "VehMaxSpeed", "Gender", "ClaimAmount", "Garage"]
                .map(String::from)
                .to_vec(),
            rows: rows
                .iter()
                .map(|r| [r.0, r.1, r.2, r.3, r.4, r.5].map(String::from).to_vec())
                .collect(),
        }
    }

    fn recipe() -> Recipe {
        serde_json::from_str(
            r#"{
                "response": "ClaimAmount",
                "response_scale": 0.001,
                "positive_response_only": true,
                "drop": ["Garage"],
                "numeric": ["Exposure"],
                "categorical": ["Gender"],
                "ordinal": {
                    "VehAge": {"0": 0, "6-7": 6, "10+": 11},
                    "VehMaxSpeed": {"1-130 km/h": 1, "130-140 km/h": 2}
                },
                "standardize": false
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn ordinal_maps_and_one_hot() {
        let t = table();
        let enc = TabularEncoder::fit(&recipe(), &t, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(enc.feature_names(), ["Exposure", "VehAge", "VehMaxSpeed", "Gender_M"]);
        let d = enc.encode(&t, &[0, 1], SplitTag::Full, 0).unwrap();
        assert_eq!(d.row(0), &[0.5, 6.0, 1.0, 1.0]);
        assert_eq!(d.row(1), &[0.2, 11.0, 2.0, 0.0]);
        assert_eq!(d.y, vec![1.2, 0.0]);
    }

    #[test]
    fn split_drops_non_positive_and_uses_train_statistics() {
        let t = table();
        let mut r = recipe();
        r.standardize = true;
        let (s, enc) = preprocess_tabular(&t, &r, 3).unwrap();
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 5);
        assert!(s.train.y.iter().chain(&s.val.y).all(|&v| v > 0.0));
        // Standardized training column has zero mean.
        let mean = s.train.x.column(0).sum() / s.train.len() as f64;
        assert!(mean.abs() < 1e-12);
        let json = serde_json::to_string(&enc).unwrap();
        let back: TabularEncoder = serde_json::from_str(&json).unwrap();
        assert_eq!(back.feature_names(), enc.feature_names());
    }

    #[test]
    fn unseen_level_encodes_as_zeros() {
        let mut t = table();
        let enc = TabularEncoder::fit(&recipe(), &t, &[0, 1, 2]).unwrap();
        t.rows[3][3] = "X".into();
        let d = enc.encode(&t, &[3], SplitTag::Test, 0).unwrap();
        assert_eq!(d.row(0)[3], 0.0);
    }

    #[test]
    fn roles_must_cover_columns() {
        let t = table();
        let mut r = recipe();
        r.drop.clear();
        assert!(TabularEncoder::fit(&r, &t, &[0]).is_err());
        let mut r = recipe();
        r.numeric.push("Gender".into());
        assert!(TabularEncoder::fit(&r, &t, &[0]).is_err());
    }

    #[test]
    fn non_numeric_response_is_rejected() {
        let mut t = table();
        t.rows[2][4] = "lots".into();
        assert!(preprocess_tabular(&t, &recipe(), 0).is_err());
    }

    #[test]
    fn groups_follow_blocks() {
        let t = table();
        let enc = TabularEncoder::fit(&recipe(), &t, &[0, 1, 2, 3, 4, 5]).unwrap();
        let groups = enc.feature_groups();
        assert_eq!(groups.last().unwrap(), &("Gender".to_string(), vec![3]));
    }
}
