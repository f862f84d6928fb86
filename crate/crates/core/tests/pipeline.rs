//! End-to-end library pipeline tests on synthetic data: coverage bands,
//! equivariance, asymmetry capture, and model round-trips.

use cpreg_core::conformal::{
    load_model, save_model, CpsModel, CrModel, Model, MondrianBinning,
};
use cpreg_core::data::{split_dataset, Dataset};
use cpreg_core::difficulty::{estimate, fit_difficulty, DifficultyKind};
use cpreg_core::evaluation::{difficulty_quantile_rmse, effective_coverage};
use cpreg_core::testbed::{fit_baseline, generate_synthetic, predict_baseline, NoiseProfile};

struct PipelineRun {
    cal: Dataset,
    test: Dataset,
    model: CpsModel,
    test_sigmas: Vec<f64>,
}

/// generate -> split -> fit baseline -> attach preds -> fit difficulty ->
/// calibrate CPS.
fn run_pipeline(profile: &NoiseProfile, seed: u64, bins: Option<usize>) -> PipelineRun {
    let full = generate_synthetic(5000, 4, profile, seed);
    let (train, mut cal, mut test) = split_dataset(&full, (0.4, 0.2, 0.4), seed).unwrap();
    assert_eq!(train.n_rows(), 2000);
    assert_eq!(cal.n_rows(), 1000);
    assert_eq!(test.n_rows(), 2000);

    let baseline = fit_baseline(&train, 25).unwrap();
    cal.preds = Some(predict_baseline(&baseline, &cal.features).unwrap());
    test.preds = Some(predict_baseline(&baseline, &test.features).unwrap());

    let est = fit_difficulty(DifficultyKind::KnnStd, &train, 25, 0.01, None, true).unwrap();
    let binning =
        bins.map(|b| MondrianBinning::fit(cal.preds.as_deref().unwrap(), b, 40).unwrap());
    let test_sigmas = estimate(&est, &test.features, test.preds.as_deref()).unwrap();
    let model = CpsModel::calibrate(&cal, est, binning, Some((2.5, 97.5))).unwrap();
    PipelineRun {
        cal,
        test,
        model,
        test_sigmas,
    }
}

#[test]
fn pipeline_closure_coverage_band() {
    let profile = NoiseProfile::new(1.0, 5.0, 0.0);
    let run = run_pipeline(&profile, 11, None);
    let intervals = run
        .model
        .predict_batch(run.test.preds.as_deref().unwrap(), &run.test_sigmas, 2.5, 97.5)
        .unwrap();
    let coverage = effective_coverage(&intervals, &run.test.targets).unwrap();
    assert!(
        (0.93..=0.97).contains(&coverage),
        "coverage {coverage} outside [0.93, 0.97]"
    );
}

#[test]
fn cr_coverage_band_at_95() {
    let profile = NoiseProfile::new(1.0, 5.0, 0.0);
    let run = run_pipeline(&profile, 13, None);
    let cr = CrModel::calibrate(&run.cal, run.model.estimator().clone(), None, Some(0.95)).unwrap();
    let preds = run.test.preds.as_deref().unwrap();
    let intervals = cr.predict_batch(preds, &run.test_sigmas, 0.95).unwrap();
    let coverage = effective_coverage(&intervals, &run.test.targets).unwrap();
    assert!(
        (0.93..=0.97).contains(&coverage),
        "CR coverage {coverage} outside [0.93, 0.97]"
    );
}

#[test]
fn sigma_ranks_track_errors() {
    let profile = NoiseProfile::new(1.0, 5.0, 0.0);
    let run = run_pipeline(&profile, 17, None);
    let preds = run.test.preds.as_deref().unwrap();
    let abs_err: Vec<f64> = run
        .test
        .targets
        .iter()
        .zip(preds.iter())
        .map(|(y, p)| (y - p).abs())
        .collect();
    let rho = spearman(&run.test_sigmas, &abs_err);
    assert!(rho > 0.3, "spearman {rho} too low");
}

#[test]
fn cumulative_rmse_trend_non_decreasing() {
    let profile = NoiseProfile::new(1.0, 5.0, 0.0);
    let run = run_pipeline(&profile, 11, None);
    let preds = run.test.preds.as_deref().unwrap();
    let out = difficulty_quantile_rmse(
        preds,
        &run.test.targets,
        &run.test_sigmas,
        &[0.25, 0.5, 0.75, 1.0],
    )
    .unwrap();
    for w in out.windows(2) {
        assert!(
            w[1].1 >= w[0].1 - 0.05,
            "cumulative RMSE decreased: {out:?}"
        );
    }
}

#[test]
fn skewed_noise_gives_asymmetric_cps_symmetric_cr() {
    let profile = NoiseProfile::new(1.0, 5.0, 0.5);
    let run = run_pipeline(&profile, 19, None);
    let preds = run.test.preds.as_deref().unwrap();
    let intervals = run
        .model
        .predict_batch(preds, &run.test_sigmas, 2.5, 97.5)
        .unwrap();
    let n = intervals.len() as f64;
    let mean_up: f64 = intervals
        .iter()
        .zip(preds.iter())
        .map(|(pi, p)| pi.upper - p)
        .sum::<f64>()
        / n;
    let mean_down: f64 = intervals
        .iter()
        .zip(preds.iter())
        .map(|(pi, p)| p - pi.lower)
        .sum::<f64>()
        / n;
    let mean_width: f64 = intervals.iter().map(|pi| pi.width).sum::<f64>() / n;
    assert!(
        (mean_up - mean_down).abs() > 0.1 * mean_width,
        "CPS asymmetry {} not above 0.1 * width {}",
        (mean_up - mean_down).abs(),
        mean_width
    );

    // Same data through the symmetric regressor.
    let cr = CrModel::calibrate(&run.cal, run.model.estimator().clone(), None, Some(0.95)).unwrap();
    let cr_intervals = cr.predict_batch(preds, &run.test_sigmas, 0.95).unwrap();
    let asym: f64 = cr_intervals
        .iter()
        .zip(preds.iter())
        .map(|(pi, p)| ((pi.upper - p) - (p - pi.lower)).abs())
        .sum::<f64>()
        / n;
    let cr_width: f64 = cr_intervals.iter().map(|pi| pi.width).sum::<f64>() / n;
    assert!(
        asym <= 1e-12 * cr_width,
        "CR asymmetry {asym} vs width {cr_width}"
    );
}

#[test]
fn scale_equivariance_of_intervals() {
    // beta = 0 path: externally supplied sigmas, all scaled by c.
    let profile = NoiseProfile::new(1.0, 3.0, 0.0);
    let run = run_pipeline(&profile, 23, None);
    let cal_preds = run.cal.preds.as_deref().unwrap();
    let est = || fit_difficulty(DifficultyKind::KnnStd, &run.cal, 5, 0.01, None, true).unwrap();
    let cal_sigmas: Vec<f64> = (0..run.cal.n_rows())
        .map(|i| 0.5 + (i % 13) as f64 * 0.21)
        .collect();
    let c = 37.5;
    let scaled: Vec<f64> = cal_sigmas.iter().map(|s| s * c).collect();

    let base = CpsModel::calibrate_with_sigmas(
        &run.cal.targets,
        cal_preds,
        &cal_sigmas,
        est(),
        None,
        Some((2.5, 97.5)),
    )
    .unwrap();
    let scaled_model = CpsModel::calibrate_with_sigmas(
        &run.cal.targets,
        cal_preds,
        &scaled,
        est(),
        None,
        Some((2.5, 97.5)),
    )
    .unwrap();
    for i in 0..50 {
        let pred = 5.0 + i as f64 * 0.3;
        let sigma = 0.7 + (i % 5) as f64;
        let a = base.predict_interval(pred, sigma, None, 2.5, 97.5).unwrap();
        let b = scaled_model
            .predict_interval(pred, sigma * c, None, 2.5, 97.5)
            .unwrap();
        let scale = a.lower.abs().max(a.upper.abs()).max(1.0);
        assert!((a.lower - b.lower).abs() <= 1e-9 * scale);
        assert!((a.upper - b.upper).abs() <= 1e-9 * scale);
    }
}

#[test]
fn translation_equivariance_of_intervals() {
    let profile = NoiseProfile::new(1.0, 3.0, 0.0);
    let run = run_pipeline(&profile, 29, None);
    let cal_preds = run.cal.preds.as_deref().unwrap();
    let d = 123.25;
    let est = fit_difficulty(DifficultyKind::KnnStd, &run.cal, 5, 0.01, None, true).unwrap();
    let sigmas = estimate(&est, &run.cal.features, Some(cal_preds)).unwrap();

    let shifted_targets: Vec<f64> = run.cal.targets.iter().map(|y| y + d).collect();
    let shifted_preds: Vec<f64> = cal_preds.iter().map(|p| p + d).collect();

    let base = CpsModel::calibrate_with_sigmas(
        &run.cal.targets,
        cal_preds,
        &sigmas,
        est.clone(),
        None,
        Some((2.5, 97.5)),
    )
    .unwrap();
    let shifted = CpsModel::calibrate_with_sigmas(
        &shifted_targets,
        &shifted_preds,
        &sigmas,
        est,
        None,
        Some((2.5, 97.5)),
    )
    .unwrap();
    for i in 0..50 {
        let pred = -4.0 + i as f64 * 0.37;
        let sigma = 0.4 + (i % 7) as f64 * 0.8;
        let a = base.predict_interval(pred, sigma, None, 2.5, 97.5).unwrap();
        let b = shifted
            .predict_interval(pred + d, sigma, None, 2.5, 97.5)
            .unwrap();
        assert!((b.lower - (a.lower + d)).abs() <= 1e-9);
        assert!((b.upper - (a.upper + d)).abs() <= 1e-9);
    }
}

#[test]
fn mondrian_single_bin_equals_plain() {
    let profile = NoiseProfile::new(1.0, 4.0, 0.0);
    let run_plain = run_pipeline(&profile, 31, None);
    let run_b1 = run_pipeline(&profile, 31, Some(1));
    let preds = run_plain.test.preds.as_deref().unwrap();
    let a = run_plain
        .model
        .predict_batch(preds, &run_plain.test_sigmas, 2.5, 97.5)
        .unwrap();
    let b = run_b1
        .model
        .predict_batch(preds, &run_b1.test_sigmas, 2.5, 97.5)
        .unwrap();
    for (x, y) in a.iter().zip(b.iter()) {
        assert_eq!(x.lower, y.lower);
        assert_eq!(x.upper, y.upper);
        assert_eq!(x.width, y.width);
        assert_eq!(x.sigma, y.sigma);
        assert_eq!(x.clamped_low, y.clamped_low);
        assert_eq!(x.clamped_high, y.clamped_high);
    }
}

#[test]
fn saved_model_reproduces_intervals() {
    let profile = NoiseProfile::new(1.0, 5.0, 0.2);
    let run = run_pipeline(&profile, 37, Some(5));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cps.json");
    save_model(&Model::Cps(run.model.clone()), &path).unwrap();
    let loaded = match load_model(&path).unwrap() {
        Model::Cps(m) => m,
        _ => panic!("wrong kind"),
    };
    let preds = run.test.preds.as_deref().unwrap();
    let a = run
        .model
        .predict_batch(&preds[..100], &run.test_sigmas[..100], 2.5, 97.5)
        .unwrap();
    let b = loaded
        .predict_batch(&preds[..100], &run.test_sigmas[..100], 2.5, 97.5)
        .unwrap();
    assert_eq!(a, b);

    // Sigmas recomputed from the reloaded estimator match bitwise too.
    let s = estimate(loaded.estimator(), &run.test.features[..100], Some(&preds[..100])).unwrap();
    assert_eq!(&run.test_sigmas[..100], &s[..]);
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ranks = |v: &[f64]| {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&i, &j| v[i].total_cmp(&v[j]).then(i.cmp(&j)));
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in order.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    };
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        let da = ra[i] - mean;
        let db = rb[i] - mean;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    cov / (va.sqrt() * vb.sqrt())
}
