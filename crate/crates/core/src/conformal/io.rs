//! Versioned model serialization.
//!
//! Models are stored as JSON with a `format_version` field checked before
//! anything else. Floats survive the round trip bit for bit (shortest
//! round-trip decimal encoding), so a reloaded model reproduces every
//! interval of the original exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::FeatureStats;
use crate::difficulty::{DifficultyEstimator, DifficultyKind};
use crate::error::{Error, Result};

use super::{CpsModel, CrModel, ModelMeta, MondrianBinning};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A saved conformal model of either kind.
#[derive(Debug, Clone)]
pub enum Model {
    Cps(CpsModel),
    Cr(CrModel),
}

impl Model {
    pub fn kind_str(&self) -> &'static str {
        match self {
            Model::Cps(_) => "cps",
            Model::Cr(_) => "cr",
        }
    }

    pub fn meta(&self) -> &ModelMeta {
        match self {
            Model::Cps(m) => m.meta(),
            Model::Cr(m) => m.meta(),
        }
    }

    pub fn estimator(&self) -> &DifficultyEstimator {
        match self {
            Model::Cps(m) => m.estimator(),
            Model::Cr(m) => m.estimator(),
        }
    }

    pub fn binning(&self) -> Option<&MondrianBinning> {
        match self {
            Model::Cps(m) => m.binning(),
            Model::Cr(m) => m.binning(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EstimatorFile {
    kind: String,
    k: usize,
    beta: f64,
    feature_stats: Option<FeatureStats>,
    ref_features: Vec<Vec<f64>>,
    ref_targets: Option<Vec<f64>>,
    ref_abs_residuals: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    binning: Option<Vec<f64>>,
    scores_per_bin: Vec<Vec<f64>>,
    estimator: EstimatorFile,
    meta: ModelMeta,
}

fn estimator_file(est: &DifficultyEstimator) -> EstimatorFile {
    EstimatorFile {
        kind: est.kind().as_str().to_string(),
        k: est.k(),
        beta: est.beta(),
        feature_stats: est.stats().cloned(),
        ref_features: est.ref_features().to_vec(),
        ref_targets: est.ref_targets().map(|t| t.to_vec()),
        ref_abs_residuals: est.ref_abs_residuals().map(|r| r.to_vec()),
    }
}

fn estimator_from_file(f: EstimatorFile) -> Result<DifficultyEstimator> {
    let kind: DifficultyKind = f.kind.parse().map_err(Error::CorruptModel)?;
    DifficultyEstimator::from_reference(
        kind,
        f.k,
        f.beta,
        f.feature_stats,
        f.ref_features,
        f.ref_targets,
        f.ref_abs_residuals,
    )
}

/// Save a model as versioned JSON.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let (kind, binning, scores, estimator, meta) = match model {
        Model::Cps(m) => (
            "cps",
            m.binning(),
            m.scores_per_bin(),
            m.estimator(),
            m.meta(),
        ),
        Model::Cr(m) => (
            "cr",
            m.binning(),
            m.abs_scores_per_bin(),
            m.estimator(),
            m.meta(),
        ),
    };
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        kind: kind.to_string(),
        binning: binning.map(|b| b.edges().to_vec()),
        scores_per_bin: scores.to_vec(),
        estimator: estimator_file(estimator),
        meta: meta.clone(),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::CorruptModel(format!("serialization failed: {e}")))?;
    fs::write(path, json).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load a model, checking the format version before the full parse.
pub fn load_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptModel(format!("invalid JSON: {e}")))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::CorruptModel("missing format_version".into()))?;
    if version != MODEL_FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            expected: MODEL_FORMAT_VERSION,
            got: version as u32,
        });
    }
    let file: ModelFile = serde_json::from_value(value)
        .map_err(|e| Error::CorruptModel(format!("invalid model fields: {e}")))?;

    for (bin, scores) in file.scores_per_bin.iter().enumerate() {
        if scores.is_empty() {
            return Err(Error::CorruptModel(format!("bin {bin} has no scores")));
        }
        if scores.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::CorruptModel(format!("bin {bin} scores not sorted")));
        }
    }
    let expected_bins = file.binning.as_ref().map_or(1, |e| e.len() + 1);
    if file.scores_per_bin.len() != expected_bins {
        return Err(Error::CorruptModel(format!(
            "expected {expected_bins} score bins, found {}",
            file.scores_per_bin.len()
        )));
    }

    let binning = file.binning.map(MondrianBinning::from_edges);
    let estimator = estimator_from_file(file.estimator)
        .map_err(|e| Error::CorruptModel(format!("estimator: {e}")))?;
    match file.kind.as_str() {
        "cps" => Ok(Model::Cps(CpsModel::from_parts(
            file.scores_per_bin,
            binning,
            estimator,
            file.meta,
        ))),
        "cr" => Ok(Model::Cr(CrModel::from_parts(
            file.scores_per_bin,
            binning,
            estimator,
            file.meta,
        ))),
        other => Err(Error::CorruptModel(format!("unknown model kind '{other}'"))),
    }
}
