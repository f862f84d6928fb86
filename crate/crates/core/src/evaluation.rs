//! Coverage, width, and difficulty-quantile diagnostics.
//!
//! Conventions:
//! - Coverage counts a target on an interval boundary as covered.
//! - Width quartiles are Tukey hinges (median of each inclusive half of
//!   the sorted widths); the median averages the two middle values for
//!   even counts. Outliers lie beyond 1.5 IQR fences.
//! - The median extreme row is the lower of the two middle rows for even
//!   counts, so it is always an actual row.
//! - RMSE uses divisor n.

use serde::Serialize;

use crate::conformal::PredictionInterval;
use crate::error::{Error, Result};

/// Five-number width summary with Tukey fences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WidthBox {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub fence_low: f64,
    pub fence_high: f64,
    pub outliers: usize,
}

/// One row of the individual-PI extremes table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtremeRow {
    pub prediction: f64,
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    pub target: f64,
}

/// Rows achieving the minimum, median, and maximum interval width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extremes {
    pub smallest: ExtremeRow,
    pub median: ExtremeRow,
    pub largest: ExtremeRow,
}

/// Full evaluation of a batch of intervals against known targets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub effective_coverage: f64,
    pub mean_width: f64,
    pub median_width: f64,
    pub width_box: WidthBox,
    pub quantile_rmse: Vec<(f64, f64)>,
    pub extremes: Extremes,
    pub n_rows: usize,
}

fn check_len(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    Ok(())
}

/// Fraction of targets falling inside their interval, bounds inclusive.
pub fn effective_coverage(intervals: &[PredictionInterval], targets: &[f64]) -> Result<f64> {
    check_len(intervals.len(), targets.len())?;
    if intervals.is_empty() {
        return Err(Error::EmptyInput);
    }
    let covered = intervals
        .iter()
        .zip(targets.iter())
        .filter(|(pi, &y)| pi.lower <= y && y <= pi.upper)
        .count();
    Ok(covered as f64 / intervals.len() as f64)
}

fn median_of_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Width box statistics plus arithmetic mean and median width.
pub fn width_stats(intervals: &[PredictionInterval]) -> Result<(WidthBox, f64, f64)> {
    if intervals.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut widths: Vec<f64> = intervals.iter().map(|pi| pi.width).collect();
    widths.sort_unstable_by(f64::total_cmp);
    let n = widths.len();
    let mean = widths.iter().sum::<f64>() / n as f64;
    let median = median_of_sorted(&widths);
    // Tukey hinges: each half includes the middle value when n is odd.
    let q1 = median_of_sorted(&widths[..n.div_ceil(2)]);
    let q3 = median_of_sorted(&widths[n / 2..]);
    let iqr = q3 - q1;
    let fence_low = q1 - 1.5 * iqr;
    let fence_high = q3 + 1.5 * iqr;
    let outliers = widths
        .iter()
        .filter(|&&w| w < fence_low || w > fence_high)
        .count();
    Ok((
        WidthBox {
            min: widths[0],
            q1,
            median,
            q3,
            max: widths[n - 1],
            fence_low,
            fence_high,
            outliers,
        },
        mean,
        median,
    ))
}

/// Cumulative RMSE over rows sorted by ascending sigma (ties by row id).
///
/// For each fraction f, the RMSE is taken over the first `ceil(f * n)`
/// easiest rows. A difficulty estimator that ranks well shows RMSE
/// growing as harder rows are included.
pub fn difficulty_quantile_rmse(
    preds: &[f64],
    targets: &[f64],
    sigmas: &[f64],
    fractions: &[f64],
) -> Result<Vec<(f64, f64)>> {
    check_len(preds.len(), targets.len())?;
    check_len(preds.len(), sigmas.len())?;
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    if fractions.is_empty()
        || fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0))
        || fractions.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::BadQuantileFractions);
    }
    let n = preds.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigmas[a].total_cmp(&sigmas[b]).then(a.cmp(&b)));

    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &i in &order {
        let e = targets[i] - preds[i];
        acc += e * e;
        cumulative.push(acc);
    }
    Ok(fractions
        .iter()
        .map(|&f| {
            let m = ((f * n as f64).ceil() as usize).clamp(1, n);
            (f, (cumulative[m - 1] / m as f64).sqrt())
        })
        .collect())
}

/// Rows achieving minimum, median, and maximum width. Rows are ordered by
/// (width, row id); the median is the lower middle row for even counts.
pub fn interval_extremes(
    intervals: &[PredictionInterval],
    preds: &[f64],
    targets: &[f64],
) -> Result<Extremes> {
    check_len(intervals.len(), preds.len())?;
    check_len(intervals.len(), targets.len())?;
    if intervals.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = intervals.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        intervals[a]
            .width
            .total_cmp(&intervals[b].width)
            .then(a.cmp(&b))
    });
    let row = |i: usize| ExtremeRow {
        prediction: preds[i],
        lower: intervals[i].lower,
        upper: intervals[i].upper,
        width: intervals[i].width,
        target: targets[i],
    };
    Ok(Extremes {
        smallest: row(order[0]),
        median: row(order[(n - 1) / 2]),
        largest: row(order[n - 1]),
    })
}

/// Compose the full evaluation report.
pub fn evaluate(
    intervals: &[PredictionInterval],
    preds: &[f64],
    targets: &[f64],
    sigmas: &[f64],
    fractions: &[f64],
) -> Result<EvalReport> {
    let effective_coverage = effective_coverage(intervals, targets)?;
    let (width_box, mean_width, median_width) = width_stats(intervals)?;
    let quantile_rmse = difficulty_quantile_rmse(preds, targets, sigmas, fractions)?;
    let extremes = interval_extremes(intervals, preds, targets)?;
    Ok(EvalReport {
        effective_coverage,
        mean_width,
        median_width,
        width_box,
        quantile_rmse,
        extremes,
        n_rows: intervals.len(),
    })
}
