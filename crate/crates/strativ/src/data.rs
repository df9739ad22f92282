//! Core data containers: the instrument/exposure/outcome dataset, run
//! configuration, and their file formats.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Aligned instrument/exposure/outcome columns for `n` individuals.
///
/// All columns have identical length and contain only finite values; row
/// order is the ingestion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Which header names map onto the `z`, `x`, `y` columns.
#[derive(Debug, Clone)]
pub struct ColumnMap {
    pub z: String,
    pub x: String,
    pub y: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            z: "z".into(),
            x: "x".into(),
            y: "y".into(),
        }
    }
}

impl Dataset {
    pub fn new(z: Vec<f64>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if z.len() != x.len() || z.len() != y.len() {
            return Err(Error::InvalidArgument(format!(
                "column lengths differ: z={}, x={}, y={}",
                z.len(),
                x.len(),
                y.len()
            )));
        }
        if z.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (row, ((a, b), c)) in z.iter().zip(&x).zip(&y).enumerate() {
            if !(a.is_finite() && b.is_finite() && c.is_finite()) {
                return Err(Error::NonNumeric {
                    row: row + 1,
                    column: "z/x/y".into(),
                    value: "non-finite".into(),
                });
            }
        }
        Ok(Dataset { z, x, y })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Parses delimiter-separated text with a header row. Rows with missing
    /// or non-numeric values in a mapped column are rejected with their
    /// 1-based data row number; unmapped columns are ignored.
    pub fn from_reader<R: Read>(reader: R, columns: &ColumnMap, delimiter: u8) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .flexible(true)
            .comment(Some(b'#'))
            .from_reader(reader);

        let headers = rdr.headers().map_err(|source| Error::Csv {
            path: "<reader>".into(),
            source,
        })?;
        let find = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn { name: name.into() })
        };
        let zi = find(&columns.z)?;
        let xi = find(&columns.x)?;
        let yi = find(&columns.y)?;

        let mut z = Vec::new();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (row_idx, record) in rdr.records().enumerate() {
            let record = record.map_err(|source| Error::Csv {
                path: "<reader>".into(),
                source,
            })?;
            let row = row_idx + 1;
            let cell = |idx: usize, name: &str| -> Result<f64> {
                let raw = record.get(idx).unwrap_or("");
                let parsed = raw.trim().parse::<f64>();
                match parsed {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::NonNumeric {
                        row,
                        column: name.into(),
                        value: raw.into(),
                    }),
                }
            };
            z.push(cell(zi, &columns.z)?);
            x.push(cell(xi, &columns.x)?);
            y.push(cell(yi, &columns.y)?);
        }
        if z.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Dataset { z, x, y })
    }

    /// Loads a dataset from a CSV/TSV file (delimiter inferred from the
    /// extension unless given explicitly).
    pub fn load(path: &Path, columns: &ColumnMap, delimiter: Option<u8>) -> Result<Self> {
        let delim = delimiter.unwrap_or(match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("tab") => b'\t',
            _ => b',',
        });
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.into(),
            source,
        })?;
        Self::from_reader(file, columns, delim).map_err(|e| match e {
            Error::Csv { source, .. } => Error::Csv {
                path: path.into(),
                source,
            },
            other => other,
        })
    }

    /// Writes the dataset back out as CSV with `z,x,y` headers. Reloading
    /// the file reproduces the column values bit for bit.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path).map_err(|source| Error::Csv {
            path: path.into(),
            source,
        })?;
        wtr.write_record(["z", "x", "y"])
            .map_err(|source| Error::Csv {
                path: path.into(),
                source,
            })?;
        for i in 0..self.len() {
            wtr.serialize((self.z[i], self.x[i], self.y[i]))
                .map_err(|source| Error::Csv {
                    path: path.into(),
                    source,
                })?;
        }
        wtr.flush().map_err(|source| Error::Io {
            path: path.into(),
            source,
        })?;
        Ok(())
    }

    /// Sorted copy of the exposure column.
    pub fn sorted_x(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }
}

/// First-order vs second-order delta-method standard error for Wald ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeOrder {
    First,
    Second,
}

/// Which stratification algorithm to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratifier {
    Residual,
    DoublyRanked,
}

/// Run configuration shared by every pipeline stage.
///
/// Defaults: K=10, P=100, L=10, second-order standard errors, doubly-ranked
/// stratification with S=K, knot quantile range (0.05, 0.95), weak-stratum
/// threshold 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Number of strata K.
    pub strata_count: usize,
    /// Pre-stratum size S for doubly-ranked stratification; must be a
    /// positive multiple of K. `None` means S = K.
    pub pre_stratum_size: Option<usize>,
    /// Number of change-point candidates P.
    pub candidate_count: usize,
    /// Maximum number of effects L in the sum-of-single-effects fit.
    pub max_effects: usize,
    pub se_order: SeOrder,
    pub stratifier: Stratifier,
    /// Quantile probabilities (lo, hi) bounding the change-point candidates.
    pub knot_quantile_range: (f64, f64),
    pub seed: u64,
    /// Minimum |alpha|/se before a stratum is flagged as weak.
    pub weak_stratum_threshold: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            strata_count: 10,
            pre_stratum_size: None,
            candidate_count: 100,
            max_effects: 10,
            se_order: SeOrder::Second,
            stratifier: Stratifier::DoublyRanked,
            knot_quantile_range: (0.05, 0.95),
            seed: 0,
            weak_stratum_threshold: 4.0,
        }
    }
}

impl AnalysisConfig {
    /// Effective pre-stratum size (defaults to K).
    pub fn pre_stratum_size_or_default(&self) -> usize {
        self.pre_stratum_size.unwrap_or(self.strata_count)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strata_count < 2 {
            return Err(Error::InvalidConfig("strata_count must be > 1".into()));
        }
        if self.candidate_count < 1 {
            return Err(Error::InvalidConfig("candidate_count must be >= 1".into()));
        }
        if self.max_effects < 1 {
            return Err(Error::InvalidConfig("max_effects must be >= 1".into()));
        }
        let (lo, hi) = self.knot_quantile_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::InvalidConfig(format!(
                "knot quantile range must satisfy 0 <= lo < hi <= 1, got ({lo}, {hi})"
            )));
        }
        if let Some(s) = self.pre_stratum_size {
            if s == 0 || s % self.strata_count != 0 {
                return Err(Error::InvalidConfig(format!(
                    "pre_stratum_size {s} is not a positive multiple of strata_count {}",
                    self.strata_count
                )));
            }
        }
        if self.weak_stratum_threshold.is_nan() || self.weak_stratum_threshold < 0.0 {
            return Err(Error::InvalidConfig(
                "weak_stratum_threshold must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Parses `key = value` configuration text. Lines starting with `#` and
    /// blank lines are ignored; unknown keys are rejected.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = AnalysisConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.into(),
            source,
        })?;
        Self::parse_str(&text)
    }

    /// Applies a single `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(value: &str, key: &str) -> std::result::Result<T, String> {
            value
                .parse::<T>()
                .map_err(|_| format!("invalid value `{value}` for `{key}`"))
        }
        match key {
            "strata_count" | "k" => self.strata_count = num(value, key)?,
            "pre_stratum_size" | "s" => self.pre_stratum_size = Some(num(value, key)?),
            "candidate_count" | "p" => self.candidate_count = num(value, key)?,
            "max_effects" | "l" => self.max_effects = num(value, key)?,
            "se_order" => {
                self.se_order = match value {
                    "first" => SeOrder::First,
                    "second" => SeOrder::Second,
                    other => return Err(format!("unknown se_order `{other}`")),
                }
            }
            "stratifier" => {
                self.stratifier = match value {
                    "residual" => Stratifier::Residual,
                    "doubly_ranked" => Stratifier::DoublyRanked,
                    other => return Err(format!("unknown stratifier `{other}`")),
                }
            }
            "knot_lo" => self.knot_quantile_range.0 = num(value, key)?,
            "knot_hi" => self.knot_quantile_range.1 = num(value, key)?,
            "seed" => self.seed = num(value, key)?,
            "weak_stratum_threshold" => self.weak_stratum_threshold = num(value, key)?,
            other => return Err(format!("unknown configuration key `{other}`")),
        }
        Ok(())
    }
}
