//! Per-sample difficulty (sigma) estimation from a fitted reference set.
//!
//! A difficulty estimator turns a feature vector (and, for the target
//! strangeness variant, a predicted target) into a positive scale. The
//! conformal modules divide residuals by these sigmas, so a stabilizer
//! `beta` is added to every estimate to keep it strictly positive:
//!
//! - `knn_std`: population standard deviation of the k nearest reference
//!   targets, plus beta.
//! - `knn_residual`: mean absolute residual of the k nearest reference
//!   rows, plus beta.
//! - `target_strangeness`: mean absolute deviation of the predicted
//!   target from the k nearest reference targets, plus beta.
//!
//! Reference features are standardized by default (per-feature mean and
//! population std from the fit set); queries are standardized with the
//! same statistics.

use std::fmt;
use std::str::FromStr;

use crate::data::{compute_stats, standardize_row, Dataset, FeatureStats};
use crate::error::{Error, Result};
use crate::knn::{build_index, query_knn, NeighborIndex};

/// Default sigma stabilizer, in the target unit (dB).
pub const DEFAULT_BETA: f64 = 0.01;

/// Default neighbor count.
pub const DEFAULT_K: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DifficultyKind {
    KnnStd,
    KnnResidual,
    TargetStrangeness,
}

impl DifficultyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DifficultyKind::KnnStd => "knn_std",
            DifficultyKind::KnnResidual => "knn_residual",
            DifficultyKind::TargetStrangeness => "target_strangeness",
        }
    }
}

impl fmt::Display for DifficultyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DifficultyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "knn_std" => Ok(DifficultyKind::KnnStd),
            "knn_residual" => Ok(DifficultyKind::KnnResidual),
            "target_strangeness" => Ok(DifficultyKind::TargetStrangeness),
            other => Err(format!(
                "unknown difficulty kind '{other}' (expected knn_std, knn_residual, or target_strangeness)"
            )),
        }
    }
}

/// A fitted KNN-backed sigma function. Immutable after fit; safe to share
/// across threads.
#[derive(Debug, Clone)]
pub struct DifficultyEstimator {
    kind: DifficultyKind,
    k: usize,
    beta: f64,
    /// Standardization statistics from the fit set, `None` when fitted
    /// with standardization disabled.
    stats: Option<FeatureStats>,
    /// Reference features as stored in the index (already standardized
    /// when `stats` is present).
    ref_features: Vec<Vec<f64>>,
    ref_targets: Option<Vec<f64>>,
    ref_abs_residuals: Option<Vec<f64>>,
    index: NeighborIndex,
}

impl DifficultyEstimator {
    /// Rebuild an estimator from its reference data. `ref_features` must
    /// already be in index space (standardized iff `stats` is present).
    pub fn from_reference(
        kind: DifficultyKind,
        k: usize,
        beta: f64,
        stats: Option<FeatureStats>,
        ref_features: Vec<Vec<f64>>,
        ref_targets: Option<Vec<f64>>,
        ref_abs_residuals: Option<Vec<f64>>,
    ) -> Result<Self> {
        if ref_features.is_empty() {
            return Err(Error::EmptyDataset);
        }
        match kind {
            DifficultyKind::KnnResidual => {
                if ref_abs_residuals.is_none() {
                    return Err(Error::MissingResiduals);
                }
            }
            DifficultyKind::KnnStd | DifficultyKind::TargetStrangeness => {
                if ref_targets.is_none() {
                    return Err(Error::EmptyDataset);
                }
            }
        }
        let index = build_index(&ref_features)?;
        Ok(DifficultyEstimator {
            kind,
            k,
            beta,
            stats,
            ref_features,
            ref_targets,
            ref_abs_residuals,
            index,
        })
    }

    pub fn kind(&self) -> DifficultyKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn stats(&self) -> Option<&FeatureStats> {
        self.stats.as_ref()
    }

    pub fn ref_features(&self) -> &[Vec<f64>] {
        &self.ref_features
    }

    pub fn ref_targets(&self) -> Option<&[f64]> {
        self.ref_targets.as_deref()
    }

    pub fn ref_abs_residuals(&self) -> Option<&[f64]> {
        self.ref_abs_residuals.as_deref()
    }

    pub fn n_features(&self) -> usize {
        self.index.dim()
    }
}

/// Fit a difficulty estimator on the training set.
///
/// `residual_source` supplies point predictions on the training rows and
/// is required for `knn_residual`, whose reference data are the absolute
/// residuals `|target - prediction|`.
pub fn fit_difficulty(
    kind: DifficultyKind,
    train: &Dataset,
    k: usize,
    beta: f64,
    residual_source: Option<&[f64]>,
    standardize: bool,
) -> Result<DifficultyEstimator> {
    if train.n_rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let stats = if standardize {
        Some(compute_stats(train)?)
    } else {
        None
    };
    let ref_features: Vec<Vec<f64>> = match &stats {
        Some(st) => train
            .features
            .iter()
            .map(|row| standardize_row(row, st))
            .collect(),
        None => train.features.clone(),
    };
    let ref_abs_residuals = match kind {
        DifficultyKind::KnnResidual => {
            let preds = residual_source.ok_or(Error::MissingResiduals)?;
            if preds.len() != train.n_rows() {
                return Err(Error::LengthMismatch {
                    left: preds.len(),
                    right: train.n_rows(),
                });
            }
            Some(
                train
                    .targets
                    .iter()
                    .zip(preds.iter())
                    .map(|(y, p)| (y - p).abs())
                    .collect(),
            )
        }
        _ => None,
    };
    DifficultyEstimator::from_reference(
        kind,
        k,
        beta,
        stats,
        ref_features,
        Some(train.targets.clone()),
        ref_abs_residuals,
    )
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (ss / n).sqrt()
}

/// Estimate sigma for each feature row.
///
/// `preds` carries the predicted target per row and is required for
/// `target_strangeness`; the other kinds ignore it.
pub fn estimate(
    est: &DifficultyEstimator,
    features: &[Vec<f64>],
    preds: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if est.kind == DifficultyKind::TargetStrangeness {
        let p = preds.ok_or(Error::MissingPredictions)?;
        if p.len() != features.len() {
            return Err(Error::LengthMismatch {
                left: p.len(),
                right: features.len(),
            });
        }
    }
    let mut sigmas = Vec::with_capacity(features.len());
    for (i, row) in features.iter().enumerate() {
        let query = match &est.stats {
            Some(st) => {
                if row.len() != st.means.len() {
                    return Err(Error::ArityMismatch {
                        expected: st.means.len(),
                        got: row.len(),
                    });
                }
                standardize_row(row, st)
            }
            None => row.clone(),
        };
        let neighbors = query_knn(&est.index, &query, est.k)?;
        let sigma = match est.kind {
            DifficultyKind::KnnStd => {
                let targets = est.ref_targets.as_ref().unwrap();
                let vals: Vec<f64> = neighbors.indices.iter().map(|&j| targets[j]).collect();
                population_std(&vals)
            }
            DifficultyKind::KnnResidual => {
                let res = est.ref_abs_residuals.as_ref().unwrap();
                let m = neighbors.indices.len() as f64;
                neighbors.indices.iter().map(|&j| res[j]).sum::<f64>() / m
            }
            DifficultyKind::TargetStrangeness => {
                let targets = est.ref_targets.as_ref().unwrap();
                let pred = preds.unwrap()[i];
                let m = neighbors.indices.len() as f64;
                neighbors
                    .indices
                    .iter()
                    .map(|&j| (pred - targets[j]).abs())
                    .sum::<f64>()
                    / m
            }
        };
        sigmas.push(sigma + est.beta);
    }
    Ok(sigmas)
}
