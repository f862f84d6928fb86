use std::fs;
use std::path::{Path, PathBuf};

use cpreg_core::conformal::{
    load_model, save_model, CpsModel, CrModel, Model, MondrianBinning, PredictionInterval,
    DEFAULT_CONFIDENCE, DEFAULT_LOWER_PERCENTILE, DEFAULT_MIN_BIN_SIZE, DEFAULT_UPPER_PERCENTILE,
};
use cpreg_core::data::{
    load_dataset, prediction_input_from_raw, read_csv, save_dataset, Dataset,
};
use cpreg_core::difficulty::{estimate, DifficultyKind, fit_difficulty, DEFAULT_BETA, DEFAULT_K};
use cpreg_core::evaluation::{evaluate as evaluate_intervals, EvalReport};
use cpreg_core::sweep::{
    run_sweep, select_best, EstimatorConfig, SweepGrid, DEFAULT_COVERAGE_FLOOR,
};
use cpreg_core::testbed::{fit_baseline, generate_synthetic, predict_baseline, NoiseProfile};
use cpreg_core::Error as CoreError;

use crate::config::{parse_list, Resolver};
use crate::{
    CalibrateArgs, CliError, ColumnArgs, EvaluateArgs, PredictArgs, SweepArgs, SynthArgs,
};

struct Columns {
    target: String,
    pred: String,
    features: Option<Vec<String>>,
}

fn resolve_columns(r: &Resolver, args: &ColumnArgs) -> Result<Columns, CliError> {
    let features = match r.opt_string(args.feature_cols.as_deref(), "columns.features") {
        Some(raw) => {
            let list: Vec<String> = parse_list(&raw).map_err(|e| CliError::Config {
                msg: format!("invalid feature column list: {e}"),
            })?;
            if list.is_empty() {
                None
            } else {
                Some(list)
            }
        }
        None => None,
    };
    Ok(Columns {
        target: r.string(args.target_col.as_deref(), "columns.target", "target"),
        pred: r.string(args.pred_col.as_deref(), "columns.pred", "pred"),
        features,
    })
}

fn paths_equal(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn ensure_output_distinct(out: &Path, inputs: &[Option<&Path>]) -> Result<(), CliError> {
    for input in inputs.iter().flatten() {
        if paths_equal(out, input) {
            return Err(CliError::OutputCollision {
                path: out.to_path_buf(),
            });
        }
    }
    Ok(())
}

fn check_percentiles(lower: f64, upper: f64) -> Result<(), CliError> {
    if !(0.0 < lower && lower < upper && upper < 100.0) {
        return Err(CliError::Config {
            msg: format!("percentiles must satisfy 0 < lower < upper < 100, got {lower}/{upper}"),
        });
    }
    Ok(())
}

fn check_confidence(c: f64) -> Result<(), CliError> {
    if !(0.0 < c && c < 1.0) {
        return Err(CliError::Config {
            msg: format!("confidence must lie in (0, 1), got {c}"),
        });
    }
    Ok(())
}

fn csv_to_cli(path: &Path, e: csv::Error) -> CliError {
    let msg = e.to_string();
    if e.is_io_error() {
        if let csv::ErrorKind::Io(source) = e.into_kind() {
            return CliError::Io {
                path: path.to_path_buf(),
                source,
            };
        }
    }
    CliError::Config {
        msg: format!("{}: {msg}", path.display()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn resolve_standardize(r: &Resolver, no_standardize: bool) -> Result<bool, CliError> {
    if no_standardize {
        return Ok(false);
    }
    r.flag(false, "standardize", true)
}

fn in_file<T>(path: &Path, result: cpreg_core::Result<T>) -> Result<T, CliError> {
    result.map_err(|source| match source {
        // These already carry their path.
        e @ (CoreError::Io { .. } | CoreError::MalformedCsv { .. }) => CliError::Core(e),
        source => CliError::CoreAt {
            path: path.to_path_buf(),
            source,
        },
    })
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let r = Resolver::new(args.config.as_deref())?;
    let cols = resolve_columns(&r, &args.columns)?;
    let out = r.required_path(args.out.as_deref(), "paths.out")?;
    let n = r.parse(args.n, "synth.n", 1000)?;
    let dims = r.parse(args.dims, "synth.dims", 4)?;
    let base = r.parse(args.noise_base, "synth.noise_base", 1.0)?;
    let slope = r.parse(args.noise_slope, "synth.noise_slope", 0.0)?;
    let skew = r.parse(args.noise_skew, "synth.noise_skew", 0.0)?;
    let seed = r.parse(args.seed, "seed", 0u64)?;
    if n < 1 || dims < 1 {
        return Err(CliError::Config {
            msg: format!("n and dims must be at least 1, got n={n} dims={dims}"),
        });
    }
    if base <= 0.0 || !base.is_finite() || slope < 0.0 || !(0.0..1.0).contains(&skew) {
        return Err(CliError::Config {
            msg: format!(
                "noise profile must satisfy base > 0, slope >= 0, 0 <= skew < 1, \
                 got base={base} slope={slope} skew={skew}"
            ),
        });
    }
    let profile = NoiseProfile::new(base, slope, skew);
    let mut ds = generate_synthetic(n, dims, &profile, seed);

    let baseline_k: Option<usize> = r.opt_parse(args.baseline_k, "synth.baseline_k")?;
    let baseline_from = r.opt_path(args.baseline_from.as_deref(), "synth.baseline_from");
    if baseline_k.is_some() || baseline_from.is_some() {
        let k = baseline_k.unwrap_or(DEFAULT_K);
        let train = match &baseline_from {
            Some(path) => in_file(
                path,
                load_dataset(path, &cols.target, Some(&cols.pred), cols.features.as_deref()),
            )?,
            None => ds.clone(),
        };
        let baseline = fit_baseline(&train, k)?;
        ds.preds = Some(predict_baseline(&baseline, &ds.features)?);
    }
    ensure_output_distinct(&out, &[baseline_from.as_deref()])?;
    save_dataset(&ds, &out, &cols.target, &cols.pred)?;
    println!("wrote {} rows to {}", ds.n_rows(), out.display());
    Ok(())
}

pub fn calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let r = Resolver::new(args.config.as_deref())?;
    let cols = resolve_columns(&r, &args.columns)?;
    let train_path = r.required_path(args.train.as_deref(), "paths.train")?;
    let cal_path = r.required_path(args.cal.as_deref(), "paths.cal")?;
    let out = r.required_path(args.out.as_deref(), "paths.model")?;
    ensure_output_distinct(&out, &[Some(train_path.as_path()), Some(cal_path.as_path())])?;

    let kind_str = r.string(args.kind.as_deref(), "difficulty.kind", "knn_std");
    let kind: DifficultyKind = kind_str
        .parse()
        .map_err(|msg| CliError::Config { msg })?;
    let k = r.parse(args.k, "difficulty.k", DEFAULT_K)?;
    let beta = r.parse(args.beta, "difficulty.beta", DEFAULT_BETA)?;
    if k < 1 || beta < 0.0 {
        return Err(CliError::Config {
            msg: format!("need k >= 1 and beta >= 0, got k={k} beta={beta}"),
        });
    }
    let standardize = resolve_standardize(&r, args.no_standardize)?;
    let mondrian = r.flag(args.mondrian, "mondrian.enabled", false)?;
    let bins = r.parse(args.bins, "mondrian.bins", 5)?;
    let min_bin_size = r.parse(args.min_bin_size, "mondrian.min_bin_size", DEFAULT_MIN_BIN_SIZE)?;
    let cr = r.flag(args.cr, "cr", false)?;

    let train = in_file(
        &train_path,
        load_dataset(&train_path, &cols.target, Some(&cols.pred), cols.features.as_deref()),
    )?;
    let cal = in_file(
        &cal_path,
        load_dataset(&cal_path, &cols.target, Some(&cols.pred), cols.features.as_deref()),
    )?;
    if cal.preds.is_none() {
        return Err(CliError::CoreAt {
            path: cal_path.clone(),
            source: CoreError::MissingColumn(cols.pred.clone()),
        });
    }

    let estimator = fit_difficulty(kind, &train, k, beta, train.preds.as_deref(), standardize)?;
    let binning = if mondrian {
        Some(MondrianBinning::fit(
            cal.preds.as_deref().unwrap(),
            bins,
            min_bin_size,
        )?)
    } else {
        None
    };

    let model = if cr {
        let confidence = r.parse(args.confidence, "confidence", DEFAULT_CONFIDENCE)?;
        check_confidence(confidence)?;
        Model::Cr(CrModel::calibrate(&cal, estimator, binning, Some(confidence))?)
    } else {
        let lower = r.parse(args.lower_pct, "percentiles.lower", DEFAULT_LOWER_PERCENTILE)?;
        let upper = r.parse(args.upper_pct, "percentiles.upper", DEFAULT_UPPER_PERCENTILE)?;
        check_percentiles(lower, upper)?;
        Model::Cps(CpsModel::calibrate(
            &cal,
            estimator,
            binning,
            Some((lower, upper)),
        )?)
    };
    save_model(&model, &out)?;
    println!(
        "calibrated {} model ({kind_str}), per-bin counts {:?} -> {}",
        model.kind_str(),
        model.meta().per_bin_counts,
        out.display()
    );
    Ok(())
}

pub fn predict(args: PredictArgs) -> Result<(), CliError> {
    let r = Resolver::new(args.config.as_deref())?;
    let cols = resolve_columns(&r, &args.columns)?;
    let model_path = r.required_path(args.model.as_deref(), "paths.model")?;
    let test_path = r.required_path(args.test.as_deref(), "paths.test")?;
    let out = r.required_path(args.out.as_deref(), "paths.out")?;
    ensure_output_distinct(&out, &[Some(model_path.as_path()), Some(test_path.as_path())])?;

    let model = in_file(&model_path, load_model(&model_path))?;
    let raw = in_file(&test_path, read_csv(&test_path))?;
    let input = in_file(
        &test_path,
        prediction_input_from_raw(&raw, &cols.target, &cols.pred, cols.features.as_deref()),
    )?;
    let sigmas = estimate(model.estimator(), &input.features, Some(&input.preds))?;
    let intervals = match &model {
        Model::Cps(m) => {
            let meta = m.meta();
            let lower = r.parse(
                args.lower_pct,
                "percentiles.lower",
                meta.intended_lower_percentile.unwrap_or(DEFAULT_LOWER_PERCENTILE),
            )?;
            let upper = r.parse(
                args.upper_pct,
                "percentiles.upper",
                meta.intended_upper_percentile.unwrap_or(DEFAULT_UPPER_PERCENTILE),
            )?;
            check_percentiles(lower, upper)?;
            m.predict_batch(&input.preds, &sigmas, lower, upper)?
        }
        Model::Cr(m) => {
            let confidence = r.parse(
                args.confidence,
                "confidence",
                m.meta().intended_confidence.unwrap_or(DEFAULT_CONFIDENCE),
            )?;
            check_confidence(confidence)?;
            m.predict_batch(&input.preds, &sigmas, confidence)?
        }
    };

    let mut w = csv::Writer::from_path(&out).map_err(|e| csv_to_cli(&out, e))?;
    let mut header = raw.header.clone();
    for name in [
        "sigma",
        "bin",
        "pi_lower",
        "pi_upper",
        "pi_width",
        "clamped_low",
        "clamped_high",
    ] {
        header.push(name.to_string());
    }
    let targets = input.targets.as_deref();
    if targets.is_some() {
        header.push("covered".to_string());
    }
    w.write_record(&header).map_err(|e| csv_to_cli(&out, e))?;
    for (i, row) in raw.rows.iter().enumerate() {
        let pi = &intervals[i];
        let mut record = row.clone();
        record.push(sigmas[i].to_string());
        record.push(pi.bin.unwrap_or(0).to_string());
        record.push(pi.lower.to_string());
        record.push(pi.upper.to_string());
        record.push(pi.width.to_string());
        record.push((pi.clamped_low as u8).to_string());
        record.push((pi.clamped_high as u8).to_string());
        if let Some(t) = targets {
            let covered = pi.lower <= t[i] && t[i] <= pi.upper;
            record.push((covered as u8).to_string());
        }
        w.write_record(&record).map_err(|e| csv_to_cli(&out, e))?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: out.clone(),
        source,
    })?;
    println!("wrote {} intervals to {}", intervals.len(), out.display());
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let r = Resolver::new(args.config.as_deref())?;
    let cols = resolve_columns(&r, &args.columns)?;
    let pred_path = r.required_path(args.predictions.as_deref(), "paths.predictions")?;
    let out_dir = r.required_path(args.out.as_deref(), "paths.out")?;

    let raw = in_file(&pred_path, read_csv(&pred_path))?;
    if raw.rows.is_empty() {
        return Err(CoreError::EmptyInput.into());
    }
    let col = |name: &str| {
        raw.header.iter().position(|h| h == name).ok_or_else(|| CliError::CoreAt {
            path: pred_path.clone(),
            source: CoreError::MissingColumn(name.to_string()),
        })
    };
    let parse = |c: usize, rownum: usize| -> Result<f64, CliError> {
        let cell = &raw.rows[rownum][c];
        let v: f64 = cell.trim().parse().map_err(|_| CliError::CoreAt {
            path: pred_path.clone(),
            source: CoreError::NonNumericCell {
                row: rownum + 1,
                column: raw.header[c].clone(),
                value: cell.clone(),
            },
        })?;
        Ok(v)
    };

    let target_c = col(&cols.target)?;
    let pred_c = col(&cols.pred)?;
    let sigma_c = col("sigma")?;
    let lower_c = col("pi_lower")?;
    let upper_c = col("pi_upper")?;
    let bin_c = raw.header.iter().position(|h| h == "bin");

    let n = raw.rows.len();
    let mut targets = Vec::with_capacity(n);
    let mut preds = Vec::with_capacity(n);
    let mut sigmas = Vec::with_capacity(n);
    let mut intervals = Vec::with_capacity(n);
    for i in 0..n {
        let lower = parse(lower_c, i)?;
        let upper = parse(upper_c, i)?;
        let sigma = parse(sigma_c, i)?;
        let bin = match bin_c {
            Some(c) => raw.rows[i][c].trim().parse::<usize>().ok(),
            None => None,
        };
        targets.push(parse(target_c, i)?);
        preds.push(parse(pred_c, i)?);
        sigmas.push(sigma);
        intervals.push(PredictionInterval {
            lower,
            upper,
            width: upper - lower,
            sigma,
            bin,
            clamped_low: false,
            clamped_high: false,
        });
    }

    let report = evaluate_intervals(&intervals, &preds, &targets, &sigmas, &[0.25, 0.5, 0.75, 1.0])?;
    fs::create_dir_all(&out_dir).map_err(|source| CliError::Io {
        path: out_dir.clone(),
        source,
    })?;
    let report_path = out_dir.join("report.txt");
    let box_path = out_dir.join("width_box.csv");
    write_text(&report_path, &render_report(&report))?;
    write_text(&box_path, &render_width_box(&report))?;
    println!(
        "effective coverage {:.4}; report -> {}",
        report.effective_coverage,
        report_path.display()
    );
    Ok(())
}

fn render_report(rep: &EvalReport) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "effective_coverage={:.4}", rep.effective_coverage);
    let _ = writeln!(s, "mean_width_db={:.2}", rep.mean_width);
    let _ = writeln!(s, "median_width_db={:.2}", rep.median_width);
    let _ = writeln!(s, "width_min_db={:.2}", rep.width_box.min);
    let _ = writeln!(s, "width_q1_db={:.2}", rep.width_box.q1);
    let _ = writeln!(s, "width_median_db={:.2}", rep.width_box.median);
    let _ = writeln!(s, "width_q3_db={:.2}", rep.width_box.q3);
    let _ = writeln!(s, "width_max_db={:.2}", rep.width_box.max);
    let _ = writeln!(s, "width_fence_low_db={:.2}", rep.width_box.fence_low);
    let _ = writeln!(s, "width_fence_high_db={:.2}", rep.width_box.fence_high);
    let _ = writeln!(s, "width_outliers={}", rep.width_box.outliers);
    for (fraction, rmse) in &rep.quantile_rmse {
        let pct = (fraction * 100.0).round() as u32;
        let _ = writeln!(s, "rmse_cum_{pct}pct_db={rmse:.2}");
    }
    for (label, row) in [
        ("smallest", &rep.extremes.smallest),
        ("median", &rep.extremes.median),
        ("largest", &rep.extremes.largest),
    ] {
        let _ = writeln!(s, "{label}_pi_prediction_db={:.2}", row.prediction);
        let _ = writeln!(s, "{label}_pi_lower_db={:.2}", row.lower);
        let _ = writeln!(s, "{label}_pi_upper_db={:.2}", row.upper);
        let _ = writeln!(s, "{label}_pi_width_db={:.2}", row.width);
        let _ = writeln!(s, "{label}_pi_target_db={:.2}", row.target);
    }
    let _ = writeln!(s, "n_rows={}", rep.n_rows);
    s
}

fn render_width_box(rep: &EvalReport) -> String {
    use std::fmt::Write as _;
    let mut s = String::from("stat,value_db\n");
    let wb = &rep.width_box;
    let _ = writeln!(s, "min,{}", wb.min);
    let _ = writeln!(s, "q1,{}", wb.q1);
    let _ = writeln!(s, "median,{}", wb.median);
    let _ = writeln!(s, "q3,{}", wb.q3);
    let _ = writeln!(s, "max,{}", wb.max);
    let _ = writeln!(s, "fence_low,{}", wb.fence_low);
    let _ = writeln!(s, "fence_high,{}", wb.fence_high);
    let _ = writeln!(s, "outliers,{}", wb.outliers);
    s
}

pub fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let r = Resolver::new(args.config.as_deref())?;
    let cols = resolve_columns(&r, &args.columns)?;
    let train_path = r.required_path(args.train.as_deref(), "paths.train")?;
    let cal_path = r.required_path(args.cal.as_deref(), "paths.cal")?;
    let tune_path = r.required_path(args.tune.as_deref(), "paths.tune")?;
    let out_dir = r.required_path(args.out.as_deref(), "paths.out")?;

    let load = |path: &PathBuf| -> Result<Dataset, CliError> {
        let ds = in_file(
            path,
            load_dataset(path, &cols.target, Some(&cols.pred), cols.features.as_deref()),
        )?;
        if ds.preds.is_none() {
            return Err(CliError::CoreAt {
                path: path.clone(),
                source: CoreError::MissingColumn(cols.pred.clone()),
            });
        }
        Ok(ds)
    };
    let train = load(&train_path)?;
    let cal = load(&cal_path)?;
    let tune = load(&tune_path)?;

    let coverage_floor = r.parse(args.coverage_floor, "coverage_floor", DEFAULT_COVERAGE_FLOOR)?;
    if !(0.0 < coverage_floor && coverage_floor < 1.0) {
        return Err(CliError::Config {
            msg: format!("coverage floor must lie in (0, 1), got {coverage_floor}"),
        });
    }
    let lower = r.parse(args.lower_pct, "percentiles.lower", DEFAULT_LOWER_PERCENTILE)?;
    let upper = r.parse(args.upper_pct, "percentiles.upper", DEFAULT_UPPER_PERCENTILE)?;
    check_percentiles(lower, upper)?;

    let defaults = SweepGrid::default();
    let grid = SweepGrid {
        configurations: r.list(
            args.configs.as_deref(),
            "sweep.configs",
            &EstimatorConfig::all(),
        )?,
        k_values: r.list(args.k_values.as_deref(), "sweep.k_values", &defaults.k_values)?,
        bin_counts: r.list(
            args.bin_counts.as_deref(),
            "sweep.bin_counts",
            &defaults.bin_counts,
        )?,
        betas: r.list(args.betas.as_deref(), "sweep.betas", &defaults.betas)?,
        seeds: r.list(args.seeds.as_deref(), "sweep.seeds", &defaults.seeds)?,
        lower_percentile: lower,
        upper_percentile: upper,
        coverage_floor,
        min_bin_size: r.parse(args.min_bin_size, "mondrian.min_bin_size", DEFAULT_MIN_BIN_SIZE)?,
        standardize: resolve_standardize(&r, args.no_standardize)?,
    };

    let results = run_sweep(&grid, &train, &cal, &tune)?;
    if results.is_empty() {
        return Err(CoreError::EmptyResults.into());
    }
    let selection = select_best(&results, coverage_floor)?;

    fs::create_dir_all(&out_dir).map_err(|source| CliError::Io {
        path: out_dir.clone(),
        source,
    })?;
    let sweep_path = out_dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&sweep_path).map_err(|e| csv_to_cli(&sweep_path, e))?;
    w.write_record([
        "config_id",
        "estimator",
        "k",
        "bins",
        "beta",
        "mean_width_db",
        "coverage",
        "eligible",
        "reason",
    ])
    .map_err(|e| csv_to_cli(&sweep_path, e))?;
    for res in &results {
        w.write_record([
            res.config_id.clone(),
            res.estimator.id().to_string(),
            res.k.to_string(),
            res.bins.map(|b| b.to_string()).unwrap_or_default(),
            res.beta.to_string(),
            res.mean_width.to_string(),
            res.coverage.to_string(),
            res.eligible.to_string(),
            res.reason.clone().unwrap_or_default(),
        ])
        .map_err(|e| csv_to_cli(&sweep_path, e))?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: sweep_path.clone(),
        source,
    })?;

    let winner = &results[selection.index];
    let mut s = String::new();
    {
        use std::fmt::Write as _;
        let _ = writeln!(s, "selected={}", selection.config_id);
        let _ = writeln!(s, "estimator={}", winner.estimator.id());
        let _ = writeln!(s, "k={}", winner.k);
        let _ = writeln!(
            s,
            "bins={}",
            winner.bins.map(|b| b.to_string()).unwrap_or_default()
        );
        let _ = writeln!(s, "beta={}", winner.beta);
        let _ = writeln!(s, "mean_width_db={:.2}", winner.mean_width);
        let _ = writeln!(s, "tuning_coverage={:.4}", winner.coverage);
        let _ = writeln!(s, "coverage_floor={coverage_floor}");
        let _ = writeln!(s, "no_eligible_config={}", selection.no_eligible_config);
    }
    let selection_path = out_dir.join("selection.txt");
    write_text(&selection_path, &s)?;

    let flag = if selection.no_eligible_config {
        " [no_eligible_config]"
    } else {
        ""
    };
    println!(
        "selected {} (tuning coverage {:.4}, mean width {:.2} dB){flag}",
        selection.config_id, winner.coverage, winner.mean_width
    );
    Ok(())
}
