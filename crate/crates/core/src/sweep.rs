//! Hyperparameter search over estimator configurations, with selection by
//! narrowest mean interval width subject to an effective-coverage floor.
//!
//! Each seed re-splits the pooled train+calibration rows at the original
//! ratio, so the sweep exercises calibration variability. Grid cells are
//! independent and run in parallel; results are merged in grid order, so
//! output is deterministic regardless of thread scheduling.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::conformal::{CpsModel, MondrianBinning};
use crate::data::{split_two, Dataset};
use crate::difficulty::{estimate, fit_difficulty, DifficultyKind};
use crate::error::{Error, Result};
use crate::evaluation::effective_coverage;

/// Default effective-coverage floor for selection.
pub const DEFAULT_COVERAGE_FLOOR: f64 = 0.89;

/// The five estimator configurations swept by default: plain CPS with
/// `norm_std`/`norm_targ_strng`, and Mondrian CPS with `norm_std`,
/// `norm_targ_strng`, and `norm_res`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EstimatorConfig {
    NormStd,
    NormTargStrng,
    MondNormStd,
    MondNormTargStrng,
    MondNormRes,
}

impl EstimatorConfig {
    pub fn all() -> [EstimatorConfig; 5] {
        [
            EstimatorConfig::NormStd,
            EstimatorConfig::NormTargStrng,
            EstimatorConfig::MondNormStd,
            EstimatorConfig::MondNormTargStrng,
            EstimatorConfig::MondNormRes,
        ]
    }

    pub fn id(&self) -> &'static str {
        match self {
            EstimatorConfig::NormStd => "cps_norm_std",
            EstimatorConfig::NormTargStrng => "cps_norm_targ_strng",
            EstimatorConfig::MondNormStd => "cps_mond_norm_std",
            EstimatorConfig::MondNormTargStrng => "cps_mond_norm_targ_strng",
            EstimatorConfig::MondNormRes => "cps_mond_norm_res",
        }
    }

    pub fn is_mondrian(&self) -> bool {
        matches!(
            self,
            EstimatorConfig::MondNormStd
                | EstimatorConfig::MondNormTargStrng
                | EstimatorConfig::MondNormRes
        )
    }

    pub fn difficulty_kind(&self) -> DifficultyKind {
        match self {
            EstimatorConfig::NormStd | EstimatorConfig::MondNormStd => DifficultyKind::KnnStd,
            EstimatorConfig::NormTargStrng | EstimatorConfig::MondNormTargStrng => {
                DifficultyKind::TargetStrangeness
            }
            EstimatorConfig::MondNormRes => DifficultyKind::KnnResidual,
        }
    }
}

impl fmt::Display for EstimatorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for EstimatorConfig {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cps_norm_std" => Ok(EstimatorConfig::NormStd),
            "cps_norm_targ_strng" => Ok(EstimatorConfig::NormTargStrng),
            "cps_mond_norm_std" => Ok(EstimatorConfig::MondNormStd),
            "cps_mond_norm_targ_strng" => Ok(EstimatorConfig::MondNormTargStrng),
            "cps_mond_norm_res" => Ok(EstimatorConfig::MondNormRes),
            other => Err(format!("unknown estimator configuration '{other}'")),
        }
    }
}

/// The sweep grid. Bin counts apply only to Mondrian configurations.
#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub configurations: Vec<EstimatorConfig>,
    pub k_values: Vec<usize>,
    pub bin_counts: Vec<usize>,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub lower_percentile: f64,
    pub upper_percentile: f64,
    pub coverage_floor: f64,
    pub min_bin_size: usize,
    pub standardize: bool,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            configurations: EstimatorConfig::all().to_vec(),
            k_values: vec![5, 25, 100],
            bin_counts: vec![2, 5, 10],
            betas: vec![0.01],
            seeds: vec![1, 2, 3, 4, 5],
            lower_percentile: 2.5,
            upper_percentile: 97.5,
            coverage_floor: DEFAULT_COVERAGE_FLOOR,
            min_bin_size: 40,
            standardize: true,
        }
    }
}

/// Tuning-set outcome of a single seed run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub mean_width: f64,
    pub coverage: f64,
}

/// Aggregated outcome for one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub config_id: String,
    pub estimator: EstimatorConfig,
    pub k: usize,
    pub bins: Option<usize>,
    pub beta: f64,
    pub per_seed: Vec<SeedOutcome>,
    /// Arithmetic mean of per-seed mean widths.
    pub mean_width: f64,
    /// Arithmetic mean of per-seed coverages.
    pub coverage: f64,
    pub eligible: bool,
    /// Why the cell is ineligible when a run failed, never set otherwise.
    pub reason: Option<String>,
}

/// Outcome of [`select_best`].
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub config_id: String,
    /// Set when no configuration met the coverage floor; the selection is
    /// then the highest-coverage row.
    pub no_eligible_config: bool,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    config: EstimatorConfig,
    k: usize,
    bins: Option<usize>,
    beta: f64,
}

fn cell_id(cell: &Cell) -> String {
    match cell.bins {
        Some(b) => format!("{}_k{}_b{}_beta{}", cell.config.id(), cell.k, b, cell.beta),
        None => format!("{}_k{}_beta{}", cell.config.id(), cell.k, cell.beta),
    }
}

fn run_cell_seed(
    cell: &Cell,
    grid: &SweepGrid,
    train: &Dataset,
    cal: &Dataset,
    tune: &Dataset,
) -> Result<SeedOutcome> {
    let kind = cell.config.difficulty_kind();
    let residual_source = match kind {
        DifficultyKind::KnnResidual => Some(train.require_preds()?),
        _ => None,
    };
    let estimator = fit_difficulty(
        kind,
        train,
        cell.k,
        cell.beta,
        residual_source,
        grid.standardize,
    )?;
    let cal_preds = cal.require_preds()?;
    let binning = match cell.bins {
        Some(b) => Some(MondrianBinning::fit(cal_preds, b, grid.min_bin_size)?),
        None => None,
    };
    let model = CpsModel::calibrate(
        cal,
        estimator,
        binning,
        Some((grid.lower_percentile, grid.upper_percentile)),
    )?;
    let tune_preds = tune.require_preds()?;
    let sigmas = estimate(model.estimator(), &tune.features, Some(tune_preds))?;
    let intervals = model.predict_batch(
        tune_preds,
        &sigmas,
        grid.lower_percentile,
        grid.upper_percentile,
    )?;
    let coverage = effective_coverage(&intervals, &tune.targets)?;
    let mean_width =
        intervals.iter().map(|pi| pi.width).sum::<f64>() / intervals.len() as f64;
    Ok(SeedOutcome {
        seed: 0,
        mean_width,
        coverage,
    })
}

fn run_cell(
    cell: &Cell,
    grid: &SweepGrid,
    splits: &[(u64, Dataset, Dataset)],
    tune: &Dataset,
) -> SweepResult {
    let mut per_seed = Vec::with_capacity(splits.len());
    let mut reason = None;
    for (seed, train, cal) in splits {
        match run_cell_seed(cell, grid, train, cal, tune) {
            Ok(mut outcome) => {
                outcome.seed = *seed;
                per_seed.push(outcome);
            }
            Err(e) => {
                reason = Some(format!("seed {seed}: {}: {e}", e.class()));
                break;
            }
        }
    }
    let (mean_width, coverage) = if per_seed.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let n = per_seed.len() as f64;
        (
            per_seed.iter().map(|s| s.mean_width).sum::<f64>() / n,
            per_seed.iter().map(|s| s.coverage).sum::<f64>() / n,
        )
    };
    let eligible = reason.is_none() && coverage >= grid.coverage_floor;
    SweepResult {
        config_id: cell_id(cell),
        estimator: cell.config,
        k: cell.k,
        bins: cell.bins,
        beta: cell.beta,
        per_seed,
        mean_width,
        coverage,
        eligible,
        reason,
    }
}

/// Run the full grid. One result per cell, in grid order (configuration,
/// then k, then bins, then beta). A cell whose run fails (for example
/// with `InsufficientCalibration`) is marked ineligible with the reason
/// recorded instead of aborting the sweep.
pub fn run_sweep(
    grid: &SweepGrid,
    train: &Dataset,
    cal: &Dataset,
    tune: &Dataset,
) -> Result<Vec<SweepResult>> {
    train.require_preds()?;
    cal.require_preds()?;
    tune.require_preds()?;
    let pooled = train.concat(cal)?;
    let n_train = train.n_rows();
    let splits: Vec<(u64, Dataset, Dataset)> = grid
        .seeds
        .iter()
        .map(|&seed| {
            let (tr, ca) = split_two(&pooled, n_train, seed);
            (seed, tr, ca)
        })
        .collect();

    let mut cells = Vec::new();
    for &config in &grid.configurations {
        for &k in &grid.k_values {
            let bin_axis: Vec<Option<usize>> = if config.is_mondrian() {
                grid.bin_counts.iter().map(|&b| Some(b)).collect()
            } else {
                vec![None]
            };
            for bins in &bin_axis {
                for &beta in &grid.betas {
                    cells.push(Cell {
                        config,
                        k,
                        bins: *bins,
                        beta,
                    });
                }
            }
        }
    }

    Ok(cells
        .par_iter()
        .map(|cell| run_cell(cell, grid, &splits, tune))
        .collect())
}

/// Pick the narrowest eligible configuration.
///
/// Ties break by higher coverage, then smaller k, then lexicographic
/// config id. When nothing meets the floor, the highest-coverage row is
/// returned with `no_eligible_config` set.
pub fn select_best(results: &[SweepResult], coverage_floor: f64) -> Result<Selection> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let eligible: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.reason.is_none() && r.coverage >= coverage_floor)
        .map(|(i, _)| i)
        .collect();
    if !eligible.is_empty() {
        let best = eligible
            .into_iter()
            .min_by(|&a, &b| {
                let (ra, rb) = (&results[a], &results[b]);
                ra.mean_width
                    .total_cmp(&rb.mean_width)
                    .then(rb.coverage.total_cmp(&ra.coverage))
                    .then(ra.k.cmp(&rb.k))
                    .then(ra.config_id.cmp(&rb.config_id))
            })
            .unwrap();
        return Ok(Selection {
            index: best,
            config_id: results[best].config_id.clone(),
            no_eligible_config: false,
        });
    }
    // Fallback: surface the near-miss with the highest coverage.
    let coverage_key = |r: &SweepResult| {
        if r.coverage.is_nan() {
            f64::NEG_INFINITY
        } else {
            r.coverage
        }
    };
    let best = (0..results.len())
        .min_by(|&a, &b| {
            let (ra, rb) = (&results[a], &results[b]);
            coverage_key(rb)
                .total_cmp(&coverage_key(ra))
                .then(ra.mean_width.total_cmp(&rb.mean_width))
                .then(ra.k.cmp(&rb.k))
                .then(ra.config_id.cmp(&rb.config_id))
        })
        .unwrap();
    Ok(Selection {
        index: best,
        config_id: results[best].config_id.clone(),
        no_eligible_config: true,
    })
}
