//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Run with `cargo test -p cpreg-cli --test acceptance -- --nocapture`
//! to see every line; failed criteria print their line in the captured
//! output either way.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cpreg_core::conformal::{
    cps_quantile, load_model, save_model, CpsModel, CrModel, Model, MondrianBinning,
};
use cpreg_core::data::{split_dataset, Dataset};
use cpreg_core::difficulty::{estimate, fit_difficulty, DifficultyKind};
use cpreg_core::evaluation::{difficulty_quantile_rmse, effective_coverage};
use cpreg_core::knn::{build_index, query_knn};
use cpreg_core::sweep::{run_sweep, select_best, EstimatorConfig, SweepGrid, SweepResult};
use cpreg_core::testbed::{fit_baseline, generate_synthetic, predict_baseline, NoiseProfile};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn criterion(name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {name}: {verdict} ({detail})");
    assert!(pass, "{name}: {detail}");
}

struct PipelineRun {
    cal: Dataset,
    test: Dataset,
    model: CpsModel,
    test_sigmas: Vec<f64>,
}

/// The criterion-1 pipeline: n_train=2000, n_cal=1000, n_test=2000,
/// baseline k=25, cps_norm_std with k=25, beta=0.01.
fn run_pipeline(profile: &NoiseProfile, seed: u64, bins: Option<usize>) -> PipelineRun {
    let full = generate_synthetic(5000, 4, profile, seed);
    let (train, mut cal, mut test) = split_dataset(&full, (0.4, 0.2, 0.4), seed).unwrap();
    assert_eq!(
        (train.n_rows(), cal.n_rows(), test.n_rows()),
        (2000, 1000, 2000)
    );
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
fn criterion_01_marginal_coverage() {
    let start = Instant::now();
    let profile = NoiseProfile::new(1.0, 5.0, 0.0);
    let mut detail = String::new();
    let mut pass = true;
    for seed in [11u64, 12, 13] {
        let run = run_pipeline(&profile, seed, None);
        let intervals = run
            .model
            .predict_batch(run.test.preds.as_deref().unwrap(), &run.test_sigmas, 2.5, 97.5)
            .unwrap();
        let coverage = effective_coverage(&intervals, &run.test.targets).unwrap();
        pass &= (0.93..=0.97).contains(&coverage);
        detail.push_str(&format!("seed {seed}: {coverage:.4}; "));
    }
    let elapsed = start.elapsed();
    pass &= elapsed.as_secs_f64() < 30.0;
    detail.push_str(&format!("elapsed {:.1}s", elapsed.as_secs_f64()));
    criterion("1 marginal-coverage", pass, &detail);
}

// Independent rank oracle: the position is found by exhaustively checking
// every integer in [0, n+1] against t, then clamped into 1..=n.
fn oracle_quantile(scores: &[f64], p: f64) -> (f64, bool) {
    let n = scores.len();
    let t = (p / 100.0) * ((n + 1) as f64);
    let raw = if p < 50.0 {
        // Largest integer <= t.
        (0..=(n as i64 + 1)).rev().find(|&i| (i as f64) <= t).unwrap()
    } else {
        // Smallest integer >= t.
        (0..=(n as i64 + 1)).find(|&i| (i as f64) >= t).unwrap()
    };
    if raw < 1 {
        (scores[0], true)
    } else if raw > n as i64 {
        (scores[n - 1], true)
    } else {
        (scores[raw as usize - 1], false)
    }
}

#[test]
fn criterion_02_quantile_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    let mut checked = 0usize;
    let mut pass = true;
    for _ in 0..200 {
        let n = [5usize, 39, 100][rng.gen_range(0..3)];
        let mut scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
        scores.sort_unstable_by(f64::total_cmp);
        let mut ps: Vec<f64> = vec![2.5, 25.0, 50.0, 75.0, 97.5];
        for _ in 0..5 {
            ps.push(rng.gen_range(0.01..99.99));
        }
        for p in ps {
            let got = cps_quantile(&scores, p);
            let want = oracle_quantile(&scores, p);
            if got != want {
                pass = false;
            }
            checked += 1;
        }
    }
    criterion(
        "2 quantile-oracle",
        pass,
        &format!("{checked} (vector, percentile) pairs matched exactly"),
    );
}

#[test]
fn criterion_03_knn_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(3030);
    let mut checked = 0usize;
    let mut pass = true;
    for dims in [2usize, 8] {
        let points: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..dims).map(|_| rng.gen_range(-10.0..10.0)).collect())
            .collect();
        let index = build_index(&points).unwrap();
        for _ in 0..100 {
            let q: Vec<f64> = (0..dims).map(|_| rng.gen_range(-12.0..12.0)).collect();
            for k in [1usize, 5, 25] {
                let got = query_knn(&index, &q, k).unwrap();
                // Independent scan: full sort of (squared distance, id).
                let mut pairs: Vec<(f64, usize)> = points
                    .iter()
                    .enumerate()
                    .map(|(i, pt)| {
                        let mut s = 0.0;
                        for j in 0..dims {
                            let d = pt[j] - q[j];
                            s += d * d;
                        }
                        (s, i)
                    })
                    .collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                pairs.truncate(k);
                let oracle_idx: Vec<usize> = pairs.iter().map(|p| p.1).collect();
                let oracle_dist: Vec<f64> = pairs.iter().map(|p| p.0.sqrt()).collect();
                if got.indices != oracle_idx || got.distances != oracle_dist {
                    pass = false;
                }
                checked += 1;
            }
        }
    }
    criterion(
        "3 knn-oracle",
        pass,
        &format!("{checked} queries matched brute force exactly"),
    );
}

#[test]
fn criterion_04_difficulty_quantile_rmse_trend() {
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
    let mut pass = true;
    for w in out.windows(2) {
        if w[1].1 < w[0].1 - 0.05 {
            pass = false;
        }
    }
    let plain = {
        let ss: f64 = preds
            .iter()
            .zip(run.test.targets.iter())
            .map(|(p, y)| (y - p) * (y - p))
            .sum();
        (ss / preds.len() as f64).sqrt()
    };
    let last = out.last().unwrap().1;
    pass &= (last - plain).abs() <= 1e-12 * plain;
    let detail: Vec<String> = out.iter().map(|(f, r)| format!("{f}:{r:.2}")).collect();
    criterion(
        "4 rmse-trend",
        pass,
        &format!("cumulative {} vs plain {plain:.4}", detail.join(" ")),
    );
}

#[test]
fn criterion_05_asymmetry() {
    let profile = NoiseProfile::new(1.0, 5.0, 0.5);
    let run = run_pipeline(&profile, 19, None);
    let preds = run.test.preds.as_deref().unwrap();
    let intervals = run
        .model
        .predict_batch(preds, &run.test_sigmas, 2.5, 97.5)
        .unwrap();
    let n = intervals.len() as f64;
    let mean_up = intervals
        .iter()
        .zip(preds.iter())
        .map(|(pi, p)| pi.upper - p)
        .sum::<f64>()
        / n;
    let mean_down = intervals
        .iter()
        .zip(preds.iter())
        .map(|(pi, p)| p - pi.lower)
        .sum::<f64>()
        / n;
    let mean_width = intervals.iter().map(|pi| pi.width).sum::<f64>() / n;
    let cps_asym = (mean_up - mean_down).abs();
    let mut pass = cps_asym > 0.1 * mean_width;

    let cr = CrModel::calibrate(&run.cal, run.model.estimator().clone(), None, Some(0.95)).unwrap();
    let cr_intervals = cr.predict_batch(preds, &run.test_sigmas, 0.95).unwrap();
    let cr_asym = cr_intervals
        .iter()
        .zip(preds.iter())
        .map(|(pi, p)| ((pi.upper - p) - (p - pi.lower)).abs())
        .sum::<f64>()
        / n;
    let cr_width = cr_intervals.iter().map(|pi| pi.width).sum::<f64>() / n;
    pass &= cr_asym <= 1e-12 * cr_width;

    // The reported smallest interval with its target just outside must
    // count as not covered.
    let literal = cpreg_core::conformal::PredictionInterval {
        lower: 174.3,
        upper: 175.1,
        width: 175.1 - 174.3,
        sigma: 1.0,
        bin: None,
        clamped_low: false,
        clamped_high: false,
    };
    pass &= effective_coverage(&[literal], &[175.3]).unwrap() == 0.0;
    criterion(
        "5 asymmetry",
        pass,
        &format!(
            "CPS asymmetry {cps_asym:.3} vs 0.1*width {:.3}; CR asymmetry {cr_asym:.2e}",
            0.1 * mean_width
        ),
    );
}

#[test]
fn criterion_06_sweep_selection() {
    // Constructed two-config scenario.
    let constructed = |id: &str, width: f64, coverage: f64| SweepResult {
        config_id: id.to_string(),
        estimator: EstimatorConfig::NormStd,
        k: 25,
        bins: None,
        beta: 0.01,
        per_seed: vec![],
        mean_width: width,
        coverage,
        eligible: coverage >= 0.89,
        reason: None,
    };
    let results = vec![constructed("A", 8.0, 0.91), constructed("B", 6.5, 0.85)];
    let sel = select_best(&results, 0.89).unwrap();
    let mut pass = sel.config_id == "A" && !sel.no_eligible_config;

    // Five-estimator grid, five seeds each, on synthetic data.
    let profile = NoiseProfile::new(1.0, 4.0, 0.0);
    let train_raw = generate_synthetic(800, 3, &profile, 61);
    let cal_raw = generate_synthetic(600, 3, &profile, 62);
    let tune_raw = generate_synthetic(600, 3, &profile, 63);
    let baseline = fit_baseline(&train_raw, 25).unwrap();
    let attach = |mut ds: Dataset| {
        ds.preds = Some(predict_baseline(&baseline, &ds.features).unwrap());
        ds
    };
    let (train, cal, tune) = (attach(train_raw), attach(cal_raw), attach(tune_raw));
    let grid = SweepGrid {
        configurations: EstimatorConfig::all().to_vec(),
        k_values: vec![25],
        bin_counts: vec![5],
        betas: vec![0.01],
        seeds: vec![1, 2, 3, 4, 5],
        ..SweepGrid::default()
    };
    let results = run_sweep(&grid, &train, &cal, &tune).unwrap();
    pass &= results.len() == 5;
    pass &= results.iter().all(|r| r.per_seed.len() == 5);
    let sel = select_best(&results, grid.coverage_floor).unwrap();
    pass &= results[sel.index].eligible;
    criterion(
        "6 sweep-selection",
        pass,
        &format!(
            "constructed case selected A; grid rows {}, winner {} (coverage {:.4})",
            results.len(),
            sel.config_id,
            results[sel.index].coverage
        ),
    );
}

#[test]
fn criterion_07_equivariance_suite() {
    let profile = NoiseProfile::new(1.0, 3.0, 0.0);
    let run = run_pipeline(&profile, 23, None);
    let cal_preds = run.cal.preds.as_deref().unwrap();
    let mk_est =
        || fit_difficulty(DifficultyKind::KnnStd, &run.cal, 5, 0.01, None, true).unwrap();
    let mut pass = true;

    // Scale equivariance (beta = 0 path: sigmas supplied directly).
    let cal_sigmas: Vec<f64> = (0..run.cal.n_rows())
        .map(|i| 0.5 + (i % 13) as f64 * 0.21)
        .collect();
    let c = 37.5;
    let scaled: Vec<f64> = cal_sigmas.iter().map(|s| s * c).collect();
    let base = CpsModel::calibrate_with_sigmas(
        &run.cal.targets,
        cal_preds,
        &cal_sigmas,
        mk_est(),
        None,
        Some((2.5, 97.5)),
    )
    .unwrap();
    let scaled_model = CpsModel::calibrate_with_sigmas(
        &run.cal.targets,
        cal_preds,
        &scaled,
        mk_est(),
        None,
        Some((2.5, 97.5)),
    )
    .unwrap();
    for i in 0..100 {
        let pred = 5.0 + i as f64 * 0.17;
        let sigma = 0.7 + (i % 5) as f64;
        let a = base.predict_interval(pred, sigma, None, 2.5, 97.5).unwrap();
        let b = scaled_model
            .predict_interval(pred, sigma * c, None, 2.5, 97.5)
            .unwrap();
        let scale = a.lower.abs().max(a.upper.abs()).max(1.0);
        pass &= (a.lower - b.lower).abs() <= 1e-9 * scale
            && (a.upper - b.upper).abs() <= 1e-9 * scale;
    }

    // Translation equivariance.
    let d = 123.25;
    let est = mk_est();
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
    for i in 0..100 {
        let pred = -4.0 + i as f64 * 0.19;
        let sigma = 0.4 + (i % 7) as f64 * 0.8;
        let a = base.predict_interval(pred, sigma, None, 2.5, 97.5).unwrap();
        let b = shifted
            .predict_interval(pred + d, sigma, None, 2.5, 97.5)
            .unwrap();
        pass &= (b.lower - (a.lower + d)).abs() <= 1e-9 && (b.upper - (a.upper + d)).abs() <= 1e-9;
    }

    // Mondrian B=1 equals non-Mondrian bitwise.
    let run_b1 = run_pipeline(&profile, 23, Some(1));
    let preds = run.test.preds.as_deref().unwrap();
    let a = run
        .model
        .predict_batch(preds, &run.test_sigmas, 2.5, 97.5)
        .unwrap();
    let b = run_b1
        .model
        .predict_batch(preds, &run_b1.test_sigmas, 2.5, 97.5)
        .unwrap();
    for (x, y) in a.iter().zip(b.iter()) {
        pass &= x.lower == y.lower
            && x.upper == y.upper
            && x.width == y.width
            && x.sigma == y.sigma
            && x.clamped_low == y.clamped_low
            && x.clamped_high == y.clamped_high;
    }
    criterion(
        "7 equivariance",
        pass,
        "scale 1e-9 rel, translation 1e-9 abs, B=1 bitwise",
    );
}

#[test]
fn criterion_08_calibration_size_gate() {
    let est = fit_difficulty(
        DifficultyKind::KnnStd,
        &Dataset {
            feature_names: vec!["x1".into()],
            features: (0..50).map(|i| vec![i as f64]).collect(),
            targets: (0..50).map(|i| i as f64).collect(),
            preds: None,
        },
        5,
        0.01,
        None,
        false,
    )
    .unwrap();
    let cal_of = |n: usize| Dataset {
        feature_names: vec!["x1".into()],
        features: (0..n).map(|i| vec![i as f64]).collect(),
        targets: (0..n).map(|i| i as f64 + 0.3).collect(),
        preds: Some((0..n).map(|i| i as f64).collect()),
    };
    let small = CpsModel::calibrate(&cal_of(30), est.clone(), None, Some((2.5, 97.5)));
    let exact = CpsModel::calibrate(&cal_of(39), est, None, Some((2.5, 97.5)));
    let gate_fired = matches!(
        small,
        Err(cpreg_core::Error::InsufficientCalibration {
            needed: 39,
            got: 30,
            ..
        })
    );
    let pass = gate_fired && exact.is_ok();
    criterion(
        "8 calibration-size-gate",
        pass,
        "30 rows rejected (needs 39), 39 rows accepted",
    );
}

#[test]
fn criterion_09_per_bin_coverage() {
    let profile = NoiseProfile::new(1.0, 5.0, 0.0);
    let mut pass = true;
    let mut detail = String::new();
    for seed in [11u64, 12, 13] {
        let run = run_pipeline(&profile, seed, Some(5));
        let preds = run.test.preds.as_deref().unwrap();
        let intervals = run
            .model
            .predict_batch(preds, &run.test_sigmas, 2.5, 97.5)
            .unwrap();
        let mut hit = [0usize; 5];
        let mut tot = [0usize; 5];
        for (pi, y) in intervals.iter().zip(run.test.targets.iter()) {
            let b = pi.bin.unwrap();
            tot[b] += 1;
            if pi.lower <= *y && *y <= pi.upper {
                hit[b] += 1;
            }
        }
        let ok_bins = (0..5)
            .filter(|&b| tot[b] > 0 && hit[b] as f64 / tot[b] as f64 >= 0.89)
            .count();
        pass &= ok_bins >= 4;
        detail.push_str(&format!("seed {seed}: {ok_bins}/5 bins >= 0.89; "));
    }
    criterion("9 per-bin-coverage", pass, detail.trim_end_matches("; "));
}

fn run_cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_cpreg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("failed to spawn cpreg");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn criterion_10_determinism_and_round_trip() {
    // Full CLI pipeline twice; every output byte-identical.
    let tmp = tempfile::tempdir().unwrap();
    let mut pass = true;
    for sub in ["a", "b"] {
        let dir = tmp.path().join(sub);
        std::fs::create_dir_all(&dir).unwrap();
        let dir = dir.as_path();
        run_cli(dir, &["synth", "--out", "train.csv", "--n", "900", "--dims", "3", "--noise-base", "1", "--noise-slope", "4", "--seed", "201", "--baseline-k", "25"]);
        run_cli(dir, &["synth", "--out", "cal.csv", "--n", "700", "--dims", "3", "--noise-base", "1", "--noise-slope", "4", "--seed", "202", "--baseline-from", "train.csv", "--baseline-k", "25"]);
        run_cli(dir, &["synth", "--out", "test.csv", "--n", "500", "--dims", "3", "--noise-base", "1", "--noise-slope", "4", "--seed", "203", "--baseline-from", "train.csv", "--baseline-k", "25"]);
        run_cli(dir, &["calibrate", "--train", "train.csv", "--cal", "cal.csv", "--out", "model.json", "--mondrian", "--bins", "5", "--min-bin-size", "40"]);
        run_cli(dir, &["predict", "--model", "model.json", "--test", "test.csv", "--out", "preds.csv"]);
        run_cli(dir, &["evaluate", "--predictions", "preds.csv", "--out", "eval"]);
        run_cli(dir, &["sweep", "--train", "train.csv", "--cal", "cal.csv", "--tune", "test.csv", "--out", "sweepdir", "--k-values", "25", "--bin-counts", "5", "--seeds", "1,2,3"]);
    }
    for file in [
        "train.csv",
        "cal.csv",
        "test.csv",
        "model.json",
        "preds.csv",
        "eval/report.txt",
        "eval/width_box.csv",
        "sweepdir/sweep.csv",
        "sweepdir/selection.txt",
    ] {
        let a = std::fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(file)).unwrap();
        if a != b {
            pass = false;
        }
    }

    // Model save/load reproduces 100 random intervals exactly.
    let profile = NoiseProfile::new(1.0, 5.0, 0.2);
    let run = run_pipeline(&profile, 37, Some(5));
    let path = tmp.path().join("round_trip.json");
    save_model(&Model::Cps(run.model.clone()), &path).unwrap();
    let loaded = match load_model(&path).unwrap() {
        Model::Cps(m) => m,
        _ => unreachable!(),
    };
    let mut rng = ChaCha12Rng::seed_from_u64(404);
    for _ in 0..100 {
        let pred = rng.gen_range(-20.0..40.0);
        let sigma = rng.gen_range(0.05..8.0);
        let bin = run.model.binning().map(|b| b.assign(pred));
        let a = run.model.predict_interval(pred, sigma, bin, 2.5, 97.5).unwrap();
        let b = loaded.predict_interval(pred, sigma, bin, 2.5, 97.5).unwrap();
        if a != b {
            pass = false;
        }
    }
    criterion(
        "10 determinism-round-trip",
        pass,
        "pipeline reruns byte-identical; reloaded model reproduces 100 intervals",
    );
}
