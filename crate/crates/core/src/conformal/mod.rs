//! Split conformal regressor and conformal predictive system, plain or
//! Mondrian.
//!
//! Both models are calibrated from normalized residual scores on a
//! held-out calibration set. The conformal regressor (CR) keeps absolute
//! scores `|y - pred| / sigma` and yields symmetric intervals at a
//! confidence level. The conformal predictive system (CPS) keeps signed
//! scores `(y - pred) / sigma` and yields generally asymmetric intervals
//! between two percentiles of the calibration score distribution.
//!
//! Rank selection uses conservative outward rounding on the position
//! `t = (p/100) * (n+1)`: lower-tail percentiles round down, upper-tail
//! percentiles round up. Positions outside `1..=n` clamp to the boundary
//! score and set a clamp flag on the interval; calibration refuses (per
//! bin) sample sizes too small for the intended percentiles, so clamping
//! can only occur when a model is queried at more extreme percentiles
//! than it was calibrated for.

mod io;

pub use io::{load_model, save_model, Model, MODEL_FORMAT_VERSION};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::difficulty::{estimate, DifficultyEstimator};
use crate::error::{Error, Result};

/// Default CPS percentile pair (a 95% band).
pub const DEFAULT_LOWER_PERCENTILE: f64 = 2.5;
/// Default CPS percentile pair (a 95% band).
pub const DEFAULT_UPPER_PERCENTILE: f64 = 97.5;
/// Default CR confidence level.
pub const DEFAULT_CONFIDENCE: f64 = 0.95;
/// Default minimum per-bin calibration population for Mondrian binning;
/// one above the n >= 39 bound required by the 2.5/97.5 percentile pair.
pub const DEFAULT_MIN_BIN_SIZE: usize = 40;

/// Equal-frequency Mondrian categories over the prediction axis.
///
/// `edges` are strictly ascending thresholds; bin 0 is everything below
/// the first edge, the last bin is everything at or above the last edge,
/// and an edge value itself belongs to the upper bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MondrianBinning {
    edges: Vec<f64>,
}

impl MondrianBinning {
    /// Fit equal-frequency bin edges at the prediction quantiles i/B.
    ///
    /// Each edge is the midpoint between the last sorted prediction of the
    /// lower bin and the first of the upper bin, so for distinct values the
    /// bin populations are within one of `n/B`. Heavily tied predictions
    /// can starve a bin, which is reported as `InsufficientCalibration`.
    pub fn fit(cal_preds: &[f64], bin_count: usize, min_bin_size: usize) -> Result<Self> {
        assert!(bin_count >= 1, "bin count must be at least 1");
        assert!(min_bin_size >= 1, "min_bin_size must be at least 1");
        let n = cal_preds.len();
        if n < bin_count * min_bin_size {
            return Err(Error::InsufficientCalibration {
                bin: 0,
                needed: bin_count * min_bin_size,
                got: n,
            });
        }
        let mut sorted = cal_preds.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        let mut edges = Vec::with_capacity(bin_count - 1);
        for i in 1..bin_count {
            let cut = i * n / bin_count;
            edges.push((sorted[cut - 1] + sorted[cut]) / 2.0);
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InsufficientCalibration {
                bin: 0,
                needed: bin_count * min_bin_size,
                got: 0,
            });
        }
        let binning = MondrianBinning { edges };
        let mut counts = vec![0usize; bin_count];
        for &p in cal_preds {
            counts[binning.assign(p)] += 1;
        }
        for (bin, &count) in counts.iter().enumerate() {
            if count < min_bin_size {
                return Err(Error::InsufficientCalibration {
                    bin,
                    needed: min_bin_size,
                    got: count,
                });
            }
        }
        Ok(binning)
    }

    /// The bin containing `pred`. Edges belong to the upper bin.
    pub fn assign(&self, pred: f64) -> usize {
        self.edges.partition_point(|&e| e <= pred)
    }

    pub fn bin_count(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub(crate) fn from_edges(edges: Vec<f64>) -> Self {
        MondrianBinning { edges }
    }
}

/// A prediction interval in the target unit (dB).
///
/// `clamped_low`/`clamped_high` flag bounds whose percentile rank fell
/// outside the calibration scores and was clamped to the boundary score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    pub sigma: f64,
    pub bin: Option<usize>,
    pub clamped_low: bool,
    pub clamped_high: bool,
}

/// Calibration metadata and configuration echo stored with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub per_bin_counts: Vec<usize>,
    pub difficulty_kind: String,
    pub k: usize,
    pub beta: f64,
    pub standardize: bool,
    pub bins: usize,
    pub intended_lower_percentile: Option<f64>,
    pub intended_upper_percentile: Option<f64>,
    pub intended_confidence: Option<f64>,
}

/// Percentile score lookup with conservative outward rounding.
///
/// The rank position is `t = (p/100) * (n+1)`. Lower-tail requests
/// (`p < 50`) take the score at `floor(t)`, upper-tail requests at
/// `ceil(t)`. Positions outside `1..=n` clamp to the corresponding
/// boundary score and report `clamped = true`.
pub fn cps_quantile(scores: &[f64], p: f64) -> (f64, bool) {
    let n = scores.len();
    assert!(n >= 1, "cps_quantile requires at least one score");
    let t = (p / 100.0) * ((n + 1) as f64);
    let raw = if p < 50.0 { t.floor() } else { t.ceil() } as i64;
    if raw < 1 {
        (scores[0], true)
    } else if raw > n as i64 {
        (scores[n - 1], true)
    } else {
        (scores[raw as usize - 1], false)
    }
}

/// Smallest per-bin calibration size for which the percentile pair needs
/// no clamping.
pub fn min_cal_size_for_percentiles(lower_p: f64, upper_p: f64) -> usize {
    assert!(
        0.0 < lower_p && lower_p < upper_p && upper_p < 100.0,
        "percentiles must satisfy 0 < lower < upper < 100"
    );
    let ok = |n: usize| {
        let t_lo = (lower_p / 100.0) * ((n + 1) as f64);
        let t_hi = (upper_p / 100.0) * ((n + 1) as f64);
        t_lo.floor() >= 1.0 && t_hi.ceil() <= n as f64
    };
    let mut n = 1;
    while !ok(n) {
        n += 1;
    }
    n
}

/// Smallest calibration size for which the CR rank `ceil(c * (n+1))`
/// exists.
pub fn min_cal_size_for_confidence(confidence: f64) -> usize {
    assert!(
        0.0 < confidence && confidence < 1.0,
        "confidence must lie in (0, 1)"
    );
    let ok = |n: usize| (confidence * (n + 1) as f64).ceil() as usize <= n;
    let mut n = 1;
    while !ok(n) {
        n += 1;
    }
    n
}

fn normalized_scores(
    targets: &[f64],
    preds: &[f64],
    sigmas: &[f64],
    signed: bool,
) -> Result<Vec<f64>> {
    if targets.len() != preds.len() {
        return Err(Error::LengthMismatch {
            left: targets.len(),
            right: preds.len(),
        });
    }
    if targets.len() != sigmas.len() {
        return Err(Error::LengthMismatch {
            left: targets.len(),
            right: sigmas.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(&bad) = sigmas.iter().find(|s| !s.is_finite() || **s <= 0.0) {
        return Err(Error::NonPositiveSigma(bad));
    }
    Ok(targets
        .iter()
        .zip(preds.iter())
        .zip(sigmas.iter())
        .map(|((y, p), s)| {
            let r = (y - p) / s;
            if signed {
                r
            } else {
                r.abs()
            }
        })
        .collect())
}

fn group_scores(
    scores: Vec<f64>,
    preds: &[f64],
    binning: &Option<MondrianBinning>,
) -> Vec<Vec<f64>> {
    let bins = binning.as_ref().map_or(1, |b| b.bin_count());
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for (score, &pred) in scores.into_iter().zip(preds.iter()) {
        let b = binning.as_ref().map_or(0, |bn| bn.assign(pred));
        per_bin[b].push(score);
    }
    for v in &mut per_bin {
        v.sort_unstable_by(f64::total_cmp);
    }
    per_bin
}

fn check_bin_sizes(per_bin: &[Vec<f64>], needed: usize) -> Result<()> {
    for (bin, scores) in per_bin.iter().enumerate() {
        if scores.len() < needed {
            return Err(Error::InsufficientCalibration {
                bin,
                needed,
                got: scores.len(),
            });
        }
    }
    Ok(())
}

fn resolve_bin(
    binning: &Option<MondrianBinning>,
    bin: Option<usize>,
) -> Result<usize> {
    match binning {
        Some(bn) => {
            let b = bin.ok_or(Error::MissingBin)?;
            if b >= bn.bin_count() {
                return Err(Error::BinOutOfRange {
                    bin: b,
                    bins: bn.bin_count(),
                });
            }
            Ok(b)
        }
        None => match bin {
            None | Some(0) => Ok(0),
            Some(b) => Err(Error::BinOutOfRange { bin: b, bins: 1 }),
        },
    }
}

fn meta_for(
    estimator: &DifficultyEstimator,
    binning: &Option<MondrianBinning>,
    per_bin: &[Vec<f64>],
) -> ModelMeta {
    ModelMeta {
        per_bin_counts: per_bin.iter().map(Vec::len).collect(),
        difficulty_kind: estimator.kind().as_str().to_string(),
        k: estimator.k(),
        beta: estimator.beta(),
        standardize: estimator.stats().is_some(),
        bins: binning.as_ref().map_or(1, |b| b.bin_count()),
        intended_lower_percentile: None,
        intended_upper_percentile: None,
        intended_confidence: None,
    }
}

/// A calibrated conformal predictive system: per-bin sorted signed scores
/// plus the fitted difficulty estimator.
#[derive(Debug, Clone)]
pub struct CpsModel {
    scores_per_bin: Vec<Vec<f64>>,
    binning: Option<MondrianBinning>,
    estimator: DifficultyEstimator,
    meta: ModelMeta,
}

impl CpsModel {
    /// Calibrate from a calibration set carrying predictions. Sigmas come
    /// from the estimator (the predicted target is passed as the y
    /// argument for target strangeness).
    ///
    /// `intended_percentiles`, when given, enforces the per-bin sample
    /// size needed to serve that pair without clamping.
    pub fn calibrate(
        cal: &Dataset,
        estimator: DifficultyEstimator,
        binning: Option<MondrianBinning>,
        intended_percentiles: Option<(f64, f64)>,
    ) -> Result<CpsModel> {
        let preds = cal.require_preds()?;
        let sigmas = estimate(&estimator, &cal.features, Some(preds))?;
        Self::calibrate_with_sigmas(
            &cal.targets,
            preds,
            &sigmas,
            estimator,
            binning,
            intended_percentiles,
        )
    }

    /// Calibration core with externally supplied sigmas.
    pub fn calibrate_with_sigmas(
        targets: &[f64],
        preds: &[f64],
        sigmas: &[f64],
        estimator: DifficultyEstimator,
        binning: Option<MondrianBinning>,
        intended_percentiles: Option<(f64, f64)>,
    ) -> Result<CpsModel> {
        let scores = normalized_scores(targets, preds, sigmas, true)?;
        let per_bin = group_scores(scores, preds, &binning);
        let needed = intended_percentiles
            .map(|(lo, hi)| min_cal_size_for_percentiles(lo, hi))
            .unwrap_or(1);
        check_bin_sizes(&per_bin, needed)?;
        let mut meta = meta_for(&estimator, &binning, &per_bin);
        if let Some((lo, hi)) = intended_percentiles {
            meta.intended_lower_percentile = Some(lo);
            meta.intended_upper_percentile = Some(hi);
        }
        Ok(CpsModel {
            scores_per_bin: per_bin,
            binning,
            estimator,
            meta,
        })
    }

    /// Interval `[pred + c_lo * sigma, pred + c_hi * sigma]` where the
    /// score coefficients are the requested percentiles of the bin's
    /// calibration scores.
    pub fn predict_interval(
        &self,
        pred: f64,
        sigma: f64,
        bin: Option<usize>,
        lower_p: f64,
        upper_p: f64,
    ) -> Result<PredictionInterval> {
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::NonPositiveSigma(sigma));
        }
        let b = resolve_bin(&self.binning, bin)?;
        let scores = &self.scores_per_bin[b];
        let (c_lo, clamped_low) = cps_quantile(scores, lower_p);
        let (c_hi, clamped_high) = cps_quantile(scores, upper_p);
        let lower = pred + c_lo * sigma;
        let upper = pred + c_hi * sigma;
        Ok(PredictionInterval {
            lower,
            upper,
            width: upper - lower,
            sigma,
            bin: self.binning.as_ref().map(|_| b),
            clamped_low,
            clamped_high,
        })
    }

    /// Row-by-row intervals with bins assigned from the predictions.
    pub fn predict_batch(
        &self,
        preds: &[f64],
        sigmas: &[f64],
        lower_p: f64,
        upper_p: f64,
    ) -> Result<Vec<PredictionInterval>> {
        if preds.len() != sigmas.len() {
            return Err(Error::LengthMismatch {
                left: preds.len(),
                right: sigmas.len(),
            });
        }
        preds
            .iter()
            .zip(sigmas.iter())
            .map(|(&p, &s)| {
                let bin = self.binning.as_ref().map(|b| b.assign(p));
                self.predict_interval(p, s, bin, lower_p, upper_p)
            })
            .collect()
    }

    pub fn scores_per_bin(&self) -> &[Vec<f64>] {
        &self.scores_per_bin
    }

    pub fn binning(&self) -> Option<&MondrianBinning> {
        self.binning.as_ref()
    }

    pub fn estimator(&self) -> &DifficultyEstimator {
        &self.estimator
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub(crate) fn from_parts(
        scores_per_bin: Vec<Vec<f64>>,
        binning: Option<MondrianBinning>,
        estimator: DifficultyEstimator,
        meta: ModelMeta,
    ) -> CpsModel {
        CpsModel {
            scores_per_bin,
            binning,
            estimator,
            meta,
        }
    }
}

/// A calibrated split conformal regressor: per-bin sorted absolute scores.
#[derive(Debug, Clone)]
pub struct CrModel {
    abs_scores_per_bin: Vec<Vec<f64>>,
    binning: Option<MondrianBinning>,
    estimator: DifficultyEstimator,
    meta: ModelMeta,
}

impl CrModel {
    /// Calibrate from absolute normalized residuals. `intended_confidence`
    /// enforces the per-bin size needed for that level.
    pub fn calibrate(
        cal: &Dataset,
        estimator: DifficultyEstimator,
        binning: Option<MondrianBinning>,
        intended_confidence: Option<f64>,
    ) -> Result<CrModel> {
        let preds = cal.require_preds()?;
        let sigmas = estimate(&estimator, &cal.features, Some(preds))?;
        Self::calibrate_with_sigmas(
            &cal.targets,
            preds,
            &sigmas,
            estimator,
            binning,
            intended_confidence,
        )
    }

    /// Calibration core with externally supplied sigmas.
    pub fn calibrate_with_sigmas(
        targets: &[f64],
        preds: &[f64],
        sigmas: &[f64],
        estimator: DifficultyEstimator,
        binning: Option<MondrianBinning>,
        intended_confidence: Option<f64>,
    ) -> Result<CrModel> {
        let scores = normalized_scores(targets, preds, sigmas, false)?;
        let per_bin = group_scores(scores, preds, &binning);
        let needed = intended_confidence
            .map(min_cal_size_for_confidence)
            .unwrap_or(1);
        check_bin_sizes(&per_bin, needed)?;
        let mut meta = meta_for(&estimator, &binning, &per_bin);
        meta.intended_confidence = intended_confidence;
        Ok(CrModel {
            abs_scores_per_bin: per_bin,
            binning,
            estimator,
            meta,
        })
    }

    /// Symmetric interval `pred ± alpha_(k) * sigma` with
    /// `k = ceil(confidence * (n+1))`.
    pub fn predict_interval(
        &self,
        pred: f64,
        sigma: f64,
        bin: Option<usize>,
        confidence: f64,
    ) -> Result<PredictionInterval> {
        assert!(
            0.0 < confidence && confidence < 1.0,
            "confidence must lie in (0, 1)"
        );
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::NonPositiveSigma(sigma));
        }
        let b = resolve_bin(&self.binning, bin)?;
        let scores = &self.abs_scores_per_bin[b];
        let n = scores.len();
        let rank = (confidence * (n + 1) as f64).ceil() as usize;
        if rank > n {
            return Err(Error::InsufficientCalibration {
                bin: b,
                needed: min_cal_size_for_confidence(confidence),
                got: n,
            });
        }
        let half_width = scores[rank - 1] * sigma;
        let lower = pred - half_width;
        let upper = pred + half_width;
        Ok(PredictionInterval {
            lower,
            upper,
            width: upper - lower,
            sigma,
            bin: self.binning.as_ref().map(|_| b),
            clamped_low: false,
            clamped_high: false,
        })
    }

    /// Row-by-row intervals with bins assigned from the predictions.
    pub fn predict_batch(
        &self,
        preds: &[f64],
        sigmas: &[f64],
        confidence: f64,
    ) -> Result<Vec<PredictionInterval>> {
        if preds.len() != sigmas.len() {
            return Err(Error::LengthMismatch {
                left: preds.len(),
                right: sigmas.len(),
            });
        }
        preds
            .iter()
            .zip(sigmas.iter())
            .map(|(&p, &s)| {
                let bin = self.binning.as_ref().map(|b| b.assign(p));
                self.predict_interval(p, s, bin, confidence)
            })
            .collect()
    }

    pub fn abs_scores_per_bin(&self) -> &[Vec<f64>] {
        &self.abs_scores_per_bin
    }

    pub fn binning(&self) -> Option<&MondrianBinning> {
        self.binning.as_ref()
    }

    pub fn estimator(&self) -> &DifficultyEstimator {
        &self.estimator
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub(crate) fn from_parts(
        abs_scores_per_bin: Vec<Vec<f64>>,
        binning: Option<MondrianBinning>,
        estimator: DifficultyEstimator,
        meta: ModelMeta,
    ) -> CrModel {
        CrModel {
            abs_scores_per_bin,
            binning,
            estimator,
            meta,
        }
    }
}
