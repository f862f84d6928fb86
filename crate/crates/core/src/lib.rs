//! Split conformal regressors and conformal predictive systems (CPS) for
//! point regressors, with KNN-based difficulty estimation and Mondrian
//! binning over the prediction axis.
//!
//! The crate covers the whole uncertainty pipeline: load a CSV dataset
//! (or synthesize one), fit a difficulty estimator on training data,
//! calibrate a conformal model on a held-out calibration set, emit
//! prediction intervals for test points, and evaluate coverage and width
//! diagnostics. A grid sweep selects the narrowest configuration that
//! still meets an effective-coverage floor.

pub mod conformal;
pub mod data;
pub mod difficulty;
pub mod evaluation;
pub mod knn;
pub mod sweep;
pub mod testbed;

mod error;

pub use error::{Error, Result};
