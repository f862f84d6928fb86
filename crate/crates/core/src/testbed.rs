//! Seeded synthetic heteroscedastic data and a baseline KNN point
//! regressor, so the whole pipeline runs without external models.
//!
//! The deterministic part of the target is fixed:
//!
//! ```text
//! f(x) = 10 + 4*x1 + 1.5*x1^2 + 2*sin(3*x1) + sum_{j>=2} (3/j) * x_j
//! ```
//!
//! with features drawn uniformly from [-1, 1]^dims. Noise has standard
//! deviation `base_std + slope * |x1|`. With probability `skew` a sample's
//! noise is drawn one-sided from an exponential with mean twice that
//! scale, which makes residuals right-skewed; otherwise the noise is a
//! centered normal.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::data::{compute_stats, standardize_row, Dataset, FeatureStats};
use crate::error::{Error, Result};
use crate::knn::{build_index, query_knn, NeighborIndex};

/// Heteroscedastic noise description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseProfile {
    /// Noise std at x1 = 0, in dB. Must be strictly positive.
    pub base_std: f64,
    /// Added noise std per unit |x1|, in dB.
    pub slope: f64,
    /// Fraction of samples whose noise is drawn one-sided, in [0, 1).
    pub skew: f64,
}

impl NoiseProfile {
    pub fn new(base_std: f64, slope: f64, skew: f64) -> NoiseProfile {
        let p = NoiseProfile {
            base_std,
            slope,
            skew,
        };
        p.validate();
        p
    }

    fn validate(&self) {
        assert!(self.base_std > 0.0, "base_std must be strictly positive");
        assert!(self.slope >= 0.0, "slope must be non-negative");
        assert!(
            (0.0..1.0).contains(&self.skew),
            "skew must lie in [0, 1)"
        );
    }
}

fn trend(x: &[f64]) -> f64 {
    let x1 = x[0];
    let mut y = 10.0 + 4.0 * x1 + 1.5 * x1 * x1 + 2.0 * (3.0 * x1).sin();
    for (j, &xj) in x.iter().enumerate().skip(1) {
        y += 3.0 / (j + 1) as f64 * xj;
    }
    y
}

fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    // Box-Muller; u1 in (0, 1] keeps the log finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Generate a seeded synthetic dataset with feature names `x1..x<dims>`.
pub fn generate_synthetic(
    n: usize,
    dims: usize,
    profile: &NoiseProfile,
    seed: u64,
) -> Dataset {
    assert!(n >= 1, "n must be at least 1");
    assert!(dims >= 1, "dims must be at least 1");
    profile.validate();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..dims).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let scale = profile.base_std + profile.slope * x[0].abs();
        let one_sided = profile.skew > 0.0 && rng.gen::<f64>() < profile.skew;
        let noise = if one_sided {
            let u: f64 = rng.gen();
            -2.0 * scale * (1.0 - u).ln()
        } else {
            standard_normal(&mut rng) * scale
        };
        targets.push(trend(&x) + noise);
        features.push(x);
    }
    Dataset {
        feature_names: (1..=dims).map(|j| format!("x{j}")).collect(),
        features,
        targets,
        preds: None,
    }
}

/// KNN mean-of-neighbors point regressor over standardized features.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    k: usize,
    stats: FeatureStats,
    targets: Vec<f64>,
    index: NeighborIndex,
}

/// Fit the baseline regressor on a training set.
pub fn fit_baseline(train: &Dataset, k: usize) -> Result<BaselineModel> {
    if train.n_rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let stats = compute_stats(train)?;
    let standardized: Vec<Vec<f64>> = train
        .features
        .iter()
        .map(|row| standardize_row(row, &stats))
        .collect();
    Ok(BaselineModel {
        k,
        stats,
        targets: train.targets.clone(),
        index: build_index(&standardized)?,
    })
}

/// Predict each row as the mean target of its k nearest training rows.
pub fn predict_baseline(model: &BaselineModel, features: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut preds = Vec::with_capacity(features.len());
    for row in features {
        if row.len() != model.stats.means.len() {
            return Err(Error::ArityMismatch {
                expected: model.stats.means.len(),
                got: row.len(),
            });
        }
        let q = standardize_row(row, &model.stats);
        let neighbors = query_knn(&model.index, &q, model.k)?;
        let m = neighbors.indices.len() as f64;
        preds.push(
            neighbors
                .indices
                .iter()
                .map(|&i| model.targets[i])
                .sum::<f64>()
                / m,
        );
    }
    Ok(preds)
}
