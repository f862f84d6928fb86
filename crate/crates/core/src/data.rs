//! CSV ingestion, schema validation, feature standardization, and
//! deterministic dataset splitting.
//!
//! CSV files are RFC-4180-style: UTF-8, comma delimited, first row is the
//! header. Numeric cells use a '.' decimal point, no thousands separators;
//! scientific notation is accepted. Values are written back with Rust's
//! shortest round-trip formatting, so a save/load cycle preserves every
//! `f64` bit for bit.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names appended by the prediction pipeline. Input CSVs must not
/// use them, otherwise predict output would collide with input columns.
pub const RESERVED_COLUMNS: &[&str] = &[
    "sigma",
    "pi_lower",
    "pi_upper",
    "pi_width",
    "bin",
    "covered",
    "clamped_low",
    "clamped_high",
];

/// A loaded regression dataset: feature matrix, targets, and optionally a
/// point prediction per row (same unit as the targets, e.g. dB).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    /// Row-major feature matrix; every row has `feature_names.len()` entries.
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub preds: Option<Vec<f64>>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Predictions, or `MissingPredictions` when the pred column was absent.
    pub fn require_preds(&self) -> Result<&[f64]> {
        self.preds.as_deref().ok_or(Error::MissingPredictions)
    }

    /// New dataset containing the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            preds: self
                .preds
                .as_ref()
                .map(|p| idx.iter().map(|&i| p[i]).collect()),
        }
    }

    /// Concatenate two datasets with identical schemas, `self` rows first.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.n_features() != other.n_features() {
            return Err(Error::ArityMismatch {
                expected: self.n_features(),
                got: other.n_features(),
            });
        }
        let preds = match (&self.preds, &other.preds) {
            (Some(a), Some(b)) => Some(a.iter().chain(b.iter()).copied().collect()),
            (None, None) => None,
            _ => return Err(Error::MissingPredictions),
        };
        Ok(Dataset {
            feature_names: self.feature_names.clone(),
            features: self
                .features
                .iter()
                .chain(other.features.iter())
                .cloned()
                .collect(),
            targets: self
                .targets
                .iter()
                .chain(other.targets.iter())
                .copied()
                .collect(),
            preds,
        })
    }
}

/// Per-feature mean and population standard deviation (divisor n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
}

/// Raw CSV contents: header plus rows of untouched textual cells.
#[derive(Debug, Clone)]
pub struct RawCsv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Read a CSV file without interpreting any cell.
pub fn read_csv(path: &Path) -> Result<RawCsv> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| map_csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| map_csv_error(path, e))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| map_csv_error(path, e))?;
        rows.push(record.iter().map(|s| s.to_string()).collect());
    }
    Ok(RawCsv { header, rows })
}

fn map_csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            _ => unreachable!(),
        }
    } else {
        Error::MalformedCsv {
            path: path.display().to_string(),
            msg: e.to_string(),
        }
    }
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::NonNumericCell {
        row,
        column: column.to_string(),
        value: cell.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::NonNumericCell {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        });
    }
    Ok(v)
}

/// Build a [`Dataset`] from already-read CSV contents.
///
/// `pred_column` names the prediction column when the schema has one; a
/// named column that is absent simply yields `preds: None` (callers that
/// require predictions check for themselves). When `feature_columns` is
/// omitted, every column other than target/pred whose first data cell
/// parses as a finite number is taken as a feature; text columns are
/// skipped.
pub fn dataset_from_raw(
    raw: &RawCsv,
    target_column: &str,
    pred_column: Option<&str>,
    feature_columns: Option<&[String]>,
) -> Result<Dataset> {
    for name in &raw.header {
        if RESERVED_COLUMNS.contains(&name.as_str()) {
            return Err(Error::ReservedColumn(name.clone()));
        }
    }
    let col = |name: &str| raw.header.iter().position(|h| h == name);
    let target_idx = col(target_column).ok_or_else(|| Error::MissingColumn(target_column.into()))?;
    let pred_idx = pred_column.and_then(col);
    if raw.rows.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let feature_idx: Vec<usize> = match feature_columns {
        Some(names) => names
            .iter()
            .map(|n| col(n).ok_or_else(|| Error::MissingColumn(n.clone())))
            .collect::<Result<_>>()?,
        None => (0..raw.header.len())
            .filter(|&c| c != target_idx && Some(c) != pred_idx)
            .filter(|&c| {
                let cell = raw.rows[0][c].trim();
                cell.parse::<f64>().map(|v| v.is_finite()).unwrap_or(false)
            })
            .collect(),
    };

    let feature_names: Vec<String> = feature_idx.iter().map(|&c| raw.header[c].clone()).collect();
    let mut features = Vec::with_capacity(raw.rows.len());
    let mut targets = Vec::with_capacity(raw.rows.len());
    let mut preds = pred_idx.map(|_| Vec::with_capacity(raw.rows.len()));
    for (r, row) in raw.rows.iter().enumerate() {
        let mut frow = Vec::with_capacity(feature_idx.len());
        for &c in &feature_idx {
            frow.push(parse_cell(&row[c], r + 1, &raw.header[c])?);
        }
        features.push(frow);
        targets.push(parse_cell(&row[target_idx], r + 1, target_column)?);
        if let (Some(p), Some(c)) = (preds.as_mut(), pred_idx) {
            p.push(parse_cell(&row[c], r + 1, &raw.header[c])?);
        }
    }

    Ok(Dataset {
        feature_names,
        features,
        targets,
        preds,
    })
}

/// Parsed input for interval prediction: predictions required, targets
/// optional (they only gate the `covered` output column).
#[derive(Debug, Clone)]
pub struct PredictionInput {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub preds: Vec<f64>,
    pub targets: Option<Vec<f64>>,
}

/// Build a [`PredictionInput`] from raw CSV contents. Feature selection
/// follows [`dataset_from_raw`]; the pred column must exist.
pub fn prediction_input_from_raw(
    raw: &RawCsv,
    target_column: &str,
    pred_column: &str,
    feature_columns: Option<&[String]>,
) -> Result<PredictionInput> {
    for name in &raw.header {
        if RESERVED_COLUMNS.contains(&name.as_str()) {
            return Err(Error::ReservedColumn(name.clone()));
        }
    }
    let col = |name: &str| raw.header.iter().position(|h| h == name);
    let pred_idx = col(pred_column).ok_or_else(|| Error::MissingColumn(pred_column.into()))?;
    let target_idx = col(target_column);
    if raw.rows.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let feature_idx: Vec<usize> = match feature_columns {
        Some(names) => names
            .iter()
            .map(|n| col(n).ok_or_else(|| Error::MissingColumn(n.clone())))
            .collect::<Result<_>>()?,
        None => (0..raw.header.len())
            .filter(|&c| c != pred_idx && Some(c) != target_idx)
            .filter(|&c| {
                let cell = raw.rows[0][c].trim();
                cell.parse::<f64>().map(|v| v.is_finite()).unwrap_or(false)
            })
            .collect(),
    };

    let feature_names: Vec<String> = feature_idx.iter().map(|&c| raw.header[c].clone()).collect();
    let mut features = Vec::with_capacity(raw.rows.len());
    let mut preds = Vec::with_capacity(raw.rows.len());
    let mut targets = target_idx.map(|_| Vec::with_capacity(raw.rows.len()));
    for (r, row) in raw.rows.iter().enumerate() {
        let mut frow = Vec::with_capacity(feature_idx.len());
        for &c in &feature_idx {
            frow.push(parse_cell(&row[c], r + 1, &raw.header[c])?);
        }
        features.push(frow);
        preds.push(parse_cell(&row[pred_idx], r + 1, pred_column)?);
        if let (Some(t), Some(c)) = (targets.as_mut(), target_idx) {
            t.push(parse_cell(&row[c], r + 1, target_column)?);
        }
    }
    Ok(PredictionInput {
        feature_names,
        features,
        preds,
        targets,
    })
}

/// Load a dataset from a CSV file. See [`dataset_from_raw`] for column
/// selection rules.
pub fn load_dataset(
    path: &Path,
    target_column: &str,
    pred_column: Option<&str>,
    feature_columns: Option<&[String]>,
) -> Result<Dataset> {
    dataset_from_raw(&read_csv(path)?, target_column, pred_column, feature_columns)
}

/// Write a dataset as CSV with the given target/pred column names.
pub fn save_dataset(ds: &Dataset, path: &Path, target_name: &str, pred_name: &str) -> Result<()> {
    let io_err = |e: csv::Error| map_csv_error(path, e);
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    let mut header: Vec<&str> = ds.feature_names.iter().map(|s| s.as_str()).collect();
    header.push(target_name);
    if ds.preds.is_some() {
        header.push(pred_name);
    }
    w.write_record(&header).map_err(io_err)?;
    for i in 0..ds.n_rows() {
        let mut record: Vec<String> = ds.features[i].iter().map(|v| v.to_string()).collect();
        record.push(ds.targets[i].to_string());
        if let Some(p) = &ds.preds {
            record.push(p[i].to_string());
        }
        w.write_record(&record).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// Per-column mean and population standard deviation of the feature matrix.
///
/// Constant columns get a std sentinel of 1.0 so that standardization maps
/// them to 0 instead of dividing by zero.
pub fn compute_stats(train: &Dataset) -> Result<FeatureStats> {
    let n = train.n_rows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let d = train.n_features();
    let mut means = vec![0.0; d];
    let mut std_devs = vec![0.0; d];
    for j in 0..d {
        let mut sum = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for row in &train.features {
            sum += row[j];
            min = min.min(row[j]);
            max = max.max(row[j]);
        }
        let mean = sum / n as f64;
        means[j] = mean;
        if min == max {
            std_devs[j] = 1.0;
        } else {
            let mut ss = 0.0;
            for row in &train.features {
                let dlt = row[j] - mean;
                ss += dlt * dlt;
            }
            std_devs[j] = (ss / n as f64).sqrt();
        }
    }
    Ok(FeatureStats { means, std_devs })
}

/// Transform each feature column to `(x - mean) / std`; targets and preds
/// pass through untouched.
pub fn standardize(ds: &Dataset, stats: &FeatureStats) -> Result<Dataset> {
    if stats.means.len() != ds.n_features() {
        return Err(Error::ArityMismatch {
            expected: stats.means.len(),
            got: ds.n_features(),
        });
    }
    let features = ds
        .features
        .iter()
        .map(|row| standardize_row(row, stats))
        .collect();
    Ok(Dataset {
        feature_names: ds.feature_names.clone(),
        features,
        targets: ds.targets.clone(),
        preds: ds.preds.clone(),
    })
}

pub(crate) fn standardize_row(row: &[f64], stats: &FeatureStats) -> Vec<f64> {
    row.iter()
        .zip(stats.means.iter().zip(stats.std_devs.iter()))
        .map(|(x, (m, s))| (x - m) / s)
        .collect()
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx
}

/// Split into disjoint (train, cal, test) partitions with a seeded shuffle.
///
/// Calibration and test sizes are exact floors of their fractions; the
/// remainder goes to the training partition. Row order within each
/// partition follows the original dataset.
pub fn split_dataset(
    ds: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fc, fs) = fractions;
    let in_range = |f: f64| f > 0.0 && f < 1.0;
    if !in_range(ft) || !in_range(fc) || !in_range(fs) || (ft + fc + fs - 1.0).abs() > 1e-9 {
        return Err(Error::BadFractions(ft, fc, fs));
    }
    let n = ds.n_rows();
    let n_cal = (fc * n as f64).floor() as usize;
    let n_test = (fs * n as f64).floor() as usize;
    let n_train = n - n_cal - n_test;

    let idx = shuffled_indices(n, seed);
    let take = |lo: usize, hi: usize| {
        let mut part: Vec<usize> = idx[lo..hi].to_vec();
        part.sort_unstable();
        ds.select_rows(&part)
    };
    let train = take(0, n_train);
    let cal = take(n_train, n_train + n_cal);
    let test = take(n_train + n_cal, n);
    Ok((train, cal, test))
}

/// Two-way split: the first partition gets exactly `n_first` rows.
pub fn split_two(ds: &Dataset, n_first: usize, seed: u64) -> (Dataset, Dataset) {
    let n = ds.n_rows();
    let n_first = n_first.min(n);
    let idx = shuffled_indices(n, seed);
    let mut first: Vec<usize> = idx[..n_first].to_vec();
    let mut second: Vec<usize> = idx[n_first..].to_vec();
    first.sort_unstable();
    second.sort_unstable();
    (ds.select_rows(&first), ds.select_rows(&second))
}
