use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use klce::data::format_float;
use klce::kernels::gram_pair_with;
use klce::lcb::group_trend;
use klce::metrics::summary;
use klce::simulation::SimMode as ReportMode;
use klce::{
    fit_isotonic, fit_platt, fit_temperature, gen_synthetic, klce2_unbiased, lcb_profile,
    load_dataset, reliability, resolve_with_fallback, run_test, type1_experiment, type2_experiment,
    write_dataset_with, AuditDataset, FeatureScaling, GroupKey, Kernel, KernelSpec, LcbEstimate,
    LcbKernels, MetricsSummary, Recalibrator, Schema, SimConfig, SimModel, SimReport, TestConfig,
};
use serde::Serialize;

use crate::args::{
    AuditArgs, DiagnoseArgs, Method, MetricsArgs, RecalibrateArgs, SchemaArgs, SimMode,
    SimulateArgs, TestArgs,
};
use crate::config::kernel_specs;

/// What a successful command tells the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Retained,
    Rejected,
}

fn open_input(path: &Path) -> Result<Box<dyn Read>> {
    if path == Path::new("-") {
        return Ok(Box::new(io::stdin().lock()));
    }
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Box::new(BufReader::new(f)))
}

fn open_output(path: &Path) -> Result<Box<dyn Write>> {
    if path == Path::new("-") {
        return Ok(Box::new(io::stdout().lock()));
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = open_output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn schema(args: &SchemaArgs) -> Schema {
    Schema {
        label: args.label.clone(),
        score: args.score.clone(),
        features: args.features.clone(),
    }
}

fn load(path: &Path, args: &SchemaArgs) -> Result<AuditDataset> {
    load_dataset(open_input(path)?, &schema(args))
        .with_context(|| format!("reading {}", path.display()))
}

fn test_config(args: &TestArgs, k_spec: KernelSpec, l_spec: KernelSpec) -> TestConfig {
    TestConfig {
        n_bootstrap: args.bootstrap,
        alpha_p: args.alpha,
        seed: args.seed,
        k_spec,
        l_spec,
        null_method: args.null,
        bound_b: args.bound,
    }
}

fn csv_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format_float(v)
    }
}

#[derive(Debug, Serialize)]
struct ResolvedKernels {
    score: Kernel,
    feature: Kernel,
}

#[derive(Debug, Serialize)]
struct AuditProvenance {
    input: String,
    label: String,
    score: String,
    features: Vec<String>,
    standardize: bool,
    n_bins: usize,
    test: TestConfig,
}

#[derive(Debug, Serialize)]
struct AuditReport {
    n: usize,
    klce2: f64,
    kce2: f64,
    p_value: f64,
    reject: bool,
    alpha_p: f64,
    n_bootstrap: usize,
    seed: u64,
    threshold: f64,
    within_threshold: bool,
    null_quantiles: BTreeMap<&'static str, f64>,
    kernels: ResolvedKernels,
    metrics: MetricsSummary,
    warnings: Vec<String>,
    config: AuditProvenance,
}

fn audit_report(
    input: &Path,
    d: &AuditDataset,
    schema: &SchemaArgs,
    cfg: &TestConfig,
    n_bins: usize,
) -> Result<AuditReport> {
    let metrics = summary(d, n_bins);
    let audited = if schema.standardize {
        d.standardize_features()
    } else {
        d.clone()
    };
    let res = run_test(&audited, cfg)?;
    let kce2 = klce2_unbiased(
        &audited,
        &gram_pair_with(&audited, res.score_kernel, Kernel::constant()),
    )?
    .value;
    let null_quantiles = [("q50", 0.5), ("q90", 0.9), ("q95", 0.95), ("q99", 0.99)]
        .into_iter()
        .map(|(k, q)| (k, res.null_quantile(q)))
        .collect();
    Ok(AuditReport {
        n: res.n,
        klce2: res.klce2_data,
        kce2,
        p_value: res.p_value,
        reject: res.reject_at_alpha,
        alpha_p: cfg.alpha_p,
        n_bootstrap: cfg.n_bootstrap,
        seed: cfg.seed,
        threshold: res.analytic_threshold,
        within_threshold: res.within_analytic_region(),
        null_quantiles,
        kernels: ResolvedKernels {
            score: res.score_kernel,
            feature: res.feature_kernel,
        },
        metrics,
        warnings: res.warnings,
        config: AuditProvenance {
            input: input.display().to_string(),
            label: schema.label.clone(),
            score: schema.score.clone(),
            features: d.feature_names().to_vec(),
            standardize: schema.standardize,
            n_bins,
            test: *cfg,
        },
    })
}

fn outcome(reject: bool) -> Outcome {
    if reject {
        Outcome::Rejected
    } else {
        Outcome::Retained
    }
}

pub fn audit(args: &AuditArgs) -> Result<Outcome> {
    let (k, l) = kernel_specs(&args.kernels)?;
    let cfg = test_config(&args.test, k, l);
    cfg.validate()?;
    let d = load(&args.data.input, &args.data.schema)?;
    let report = audit_report(&args.data.input, &d, &args.data.schema, &cfg, args.bins)?;
    write_json(&args.output, &report)?;
    Ok(outcome(report.reject))
}

/// Reads query points: the dataset's feature columns plus the score column.
fn load_queries(path: &Path, names: &[String], score: &str) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open_input(path)?);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{}: missing column `{name}`", path.display()))
    };
    let score_col = col(score)?;
    let feature_cols: Vec<usize> = names.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parse = |c: usize| -> Result<f64> {
            let v: f64 = rec[c].parse().with_context(|| {
                format!(
                    "{} row {}: cannot parse `{}`",
                    path.display(),
                    i + 1,
                    &rec[c]
                )
            })?;
            if !v.is_finite() {
                bail!(
                    "{} row {}: non-finite value in `{}`",
                    path.display(),
                    i + 1,
                    &headers[c]
                );
            }
            Ok(v)
        };
        let f = parse(score_col)?;
        if !(0.0..=1.0).contains(&f) {
            bail!("{} row {}: score {f} outside [0, 1]", path.display(), i + 1);
        }
        let x = feature_cols
            .iter()
            .map(|&c| parse(c))
            .collect::<Result<_>>()?;
        out.push((x, f));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct TrendReport {
    axis_feature: String,
    group_by: Option<String>,
    #[serde(flatten)]
    trend: klce::GroupTrend,
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<Outcome> {
    let (k, l) = kernel_specs(&args.kernels)?;
    let d = load(&args.data.input, &args.data.schema)?;
    let scaling = args
        .data
        .schema
        .standardize
        .then(|| FeatureScaling::fit(&d));
    let audited = match &scaling {
        Some(s) => s.apply(&d),
        None => d.clone(),
    };
    let (score, feature, warnings) = resolve_with_fallback(&audited, &k, &l)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let kernels = LcbKernels { score, feature };

    let queries: Vec<(Vec<f64>, f64)> = match &args.queries {
        Some(p) => load_queries(p, d.feature_names(), &args.data.schema.score)?,
        None => d.iter().map(|r| (r.x.to_vec(), r.fhat)).collect(),
    };
    let scaled: Vec<Vec<f64>> = queries
        .iter()
        .map(|(x, _)| {
            let mut x = x.clone();
            if let Some(s) = &scaling {
                s.transform(&mut x);
            }
            x
        })
        .collect();
    let results = lcb_profile(
        &audited,
        &kernels,
        scaled
            .iter()
            .zip(&queries)
            .map(|(x, (_, f))| (x.as_slice(), *f)),
    );

    let mut out = csv::Writer::from_writer(open_output(&args.output)?);
    let mut header: Vec<String> = d.feature_names().to_vec();
    header.extend(["fhat", "bias", "debiased_fhat", "effective_weight"].map(String::from));
    out.write_record(&header)?;
    let mut estimates = Vec::new();
    let mut failed = 0;
    for ((x, f), res) in queries.iter().zip(results) {
        let mut row: Vec<String> = x.iter().map(|&v| format_float(v)).collect();
        row.push(format_float(*f));
        match res {
            Ok(e) => {
                row.extend([e.bias, e.debiased_fhat, e.effective_weight].map(format_float));
                estimates.push(LcbEstimate {
                    query_x: x.clone(),
                    ..e
                });
            }
            Err(_) => {
                failed += 1;
                row.extend([String::new(), String::new(), format_float(0.0)]);
            }
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    if failed > 0 {
        eprintln!("warning: {failed} queries have no kernel support; bias left empty");
    }

    if let Some(path) = &args.trend {
        let index = |name: &str| {
            d.feature_index(name)
                .with_context(|| format!("unknown feature `{name}`"))
        };
        let axis = match &args.axis {
            Some(a) => index(a)?,
            None => d.dim() - 1,
        };
        let key = match &args.group_by {
            Some(g) => GroupKey::Feature(index(g)?),
            None => GroupKey::All,
        };
        let trend = group_trend(&estimates, key, axis, args.degree)?;
        for w in &trend.warnings {
            eprintln!("warning: {w}");
        }
        let report = TrendReport {
            axis_feature: d.feature_names()[axis].clone(),
            group_by: args.group_by.clone(),
            trend,
        };
        write_json(path, &report)?;
    }
    Ok(Outcome::Retained)
}

pub fn metrics(args: &MetricsArgs) -> Result<Outcome> {
    if args.bins == 0 {
        bail!("--bins must be at least 1");
    }
    let d = load(&args.data.input, &args.data.schema)?;
    let mut m = summary(&d, args.bins);
    m.accuracy = klce::accuracy(&d, args.threshold);
    write_json(&args.output, &m)?;
    if let Some(path) = &args.reliability {
        let rel = reliability(&d, args.bins);
        let mut w = csv::Writer::from_writer(open_output(path)?);
        w.write_record(["bin", "lower", "upper", "count", "mean_score", "frequency"])?;
        for (i, b) in rel.bins.iter().enumerate() {
            w.write_record([
                i.to_string(),
                format_float(b.lower),
                format_float(b.upper),
                b.count.to_string(),
                csv_float(b.mean_score),
                csv_float(b.frequency),
            ])?;
        }
        w.flush()?;
    }
    Ok(Outcome::Retained)
}

#[derive(Debug, Serialize)]
struct RecalibrationReport {
    recalibrator: Recalibrator,
    pre: AuditReport,
    post: AuditReport,
}

fn read_recalibrator(path: &Path) -> Result<Recalibrator> {
    let r: Recalibrator = serde_json::from_reader(open_input(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    if !r.is_fitted() {
        bail!("{}: recalibrator parameters are invalid", path.display());
    }
    Ok(r)
}

pub fn recalibrate(args: &RecalibrateArgs) -> Result<Outcome> {
    let rec = match (&args.load, &args.calib) {
        (Some(p), _) => read_recalibrator(p)?,
        (None, Some(calib_path)) => {
            let calib = load(calib_path, &args.schema)?;
            match args.method {
                Method::Platt => fit_platt(&calib)?,
                Method::Temperature => fit_temperature(&calib)?,
                Method::Isotonic => fit_isotonic(&calib)?,
            }
        }
        (None, None) => bail!("either --calib or --load is required"),
    };
    if let Some(p) = &args.save {
        write_json(p, &rec)?;
    }
    let test = load(&args.test, &args.schema)?;
    let recalibrated = rec.apply(&test)?;
    let mut out = open_output(&args.output)?;
    write_dataset_with(&recalibrated, &schema(&args.schema), &mut out)?;
    out.flush()?;

    let Some(report_path) = &args.then_audit else {
        return Ok(Outcome::Retained);
    };
    let (k, l) = kernel_specs(&args.kernels)?;
    let cfg = test_config(&args.test_args, k, l);
    cfg.validate()?;
    let report = RecalibrationReport {
        pre: audit_report(&args.test, &test, &args.schema, &cfg, args.bins)?,
        post: audit_report(&args.test, &recalibrated, &args.schema, &cfg, args.bins)?,
        recalibrator: rec,
    };
    write_json(report_path, &report)?;
    Ok(outcome(report.post.reject))
}

pub fn simulate(args: &SimulateArgs) -> Result<Outcome> {
    let (k_spec, l_spec) = kernel_specs(&args.kernels)?;
    if args.d_grid.is_empty() || args.n_grid.is_empty() {
        bail!("--d-grid and --n-grid need at least one value");
    }
    let base = SimConfig {
        d: args.d_grid[0],
        n: args.n_grid[0],
        replicates: args.replicates,
        alpha_p: args.alpha,
        n_bootstrap: args.bootstrap,
        seed: args.seed,
        model: args.model.into(),
        k_spec,
        l_spec,
        null_method: args.null,
    };
    let report = match args.mode {
        SimMode::Sample => {
            let d = gen_synthetic(&base, args.replicate)?;
            let mut out = open_output(&args.output)?;
            write_dataset_with(&d, &Schema::default(), &mut out)?;
            out.flush()?;
            return Ok(Outcome::Retained);
        }
        SimMode::Type1 => {
            let mut rows = Vec::new();
            for &d in &args.d_grid {
                let cfg = SimConfig {
                    d,
                    model: SimModel::Bayes,
                    ..base
                };
                rows.extend(type1_experiment(&cfg, &args.bandwidth_scales, &args.n_grid)?.rows);
            }
            SimReport {
                mode: ReportMode::Type1,
                alpha_p: args.alpha,
                rows,
            }
        }
        SimMode::Type2 => type2_experiment(&base, &args.d_grid, &args.n_grid)?,
    };
    report.write_csv(open_output(&args.output)?)?;
    Ok(Outcome::Retained)
}
