//! WebAssembly bindings for the demo page in `www/`. Each export takes plain
//! numbers and strings and returns a JSON string; the computations live in
//! the `*_report` functions so they can be tested natively.

use klce::lcb::lcb_at;
use klce::metrics::ReliabilityBins;
use klce::recalibration::sigmoid;
use klce::simulation::gen_synthetic_with_truth;
use klce::{
    ece, fit_isotonic, fit_platt, fit_temperature, gen_synthetic, reliability,
    resolve_with_fallback, run_test, Error, KernelSpec, LcbKernels, Recalibrator, Result,
    SimConfig, SimModel, TestConfig,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn parse_model(model: &str) -> Result<SimModel> {
    match model {
        "bayes" => Ok(SimModel::Bayes),
        "drop-last" => Ok(SimModel::DropLast),
        other => Err(Error::InvalidConfig(format!("unknown model `{other}`"))),
    }
}

fn sim_config(model: &str, d: usize, n: usize, seed: u64) -> Result<SimConfig> {
    Ok(SimConfig {
        d,
        n,
        seed,
        model: parse_model(model)?,
        ..SimConfig::default()
    })
}

#[derive(Debug, Serialize)]
pub struct NullReport {
    pub klce2: f64,
    pub p_value: f64,
    pub reject: bool,
    pub threshold: f64,
    pub q95: f64,
    /// `bins + 1` edges spanning the null samples and the observed value.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub warnings: Vec<String>,
}

pub fn null_report(
    model: &str,
    d: usize,
    n: usize,
    n_bootstrap: usize,
    seed: u64,
    bins: usize,
) -> Result<NullReport> {
    let cfg = sim_config(model, d, n, seed)?;
    let data = gen_synthetic(&cfg, 0)?;
    let res = run_test(
        &data,
        &TestConfig {
            n_bootstrap,
            seed,
            ..TestConfig::default()
        },
    )?;
    let bins = bins.max(1);
    let lo = res
        .null_samples
        .iter()
        .copied()
        .fold(res.klce2_data, f64::min);
    let hi = res
        .null_samples
        .iter()
        .copied()
        .fold(res.klce2_data, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0; bins];
    for s in &res.null_samples {
        counts[(((s - lo) / width) as usize).min(bins - 1)] += 1;
    }
    Ok(NullReport {
        klce2: res.klce2_data,
        p_value: res.p_value,
        reject: res.reject_at_alpha,
        threshold: res.analytic_threshold,
        q95: res.null_quantile(0.95),
        edges: (0..=bins).map(|i| lo + width * i as f64).collect(),
        counts,
        warnings: res.warnings,
    })
}

#[derive(Debug, Serialize)]
pub struct ProfileReport {
    /// Positions along the last feature; other features are held at 0.
    pub t: Vec<f64>,
    pub fhat: Vec<f64>,
    /// `None` where the kernels give no support.
    pub bias: Vec<Option<f64>>,
    pub true_bias: Vec<f64>,
}

pub fn profile_report(
    model: &str,
    d: usize,
    n: usize,
    seed: u64,
    points: usize,
) -> Result<ProfileReport> {
    let cfg = sim_config(model, d, n, seed)?;
    let data = gen_synthetic_with_truth(&cfg, 0)?.data;
    let (score, feature, _) =
        resolve_with_fallback(&data, &KernelSpec::rbf_median(), &KernelSpec::rbf_median())?;
    let kernels = LcbKernels { score, feature };
    let points = points.max(2);
    let mut out = ProfileReport {
        t: Vec::with_capacity(points),
        fhat: Vec::with_capacity(points),
        bias: Vec::with_capacity(points),
        true_bias: Vec::with_capacity(points),
    };
    for i in 0..points {
        let t = -3.0 + 6.0 * i as f64 / (points - 1) as f64;
        let mut x = vec![0.0; d];
        x[d - 1] = t;
        let fhat = match cfg.model {
            SimModel::Bayes => sigmoid(t),
            SimModel::DropLast => sigmoid(0.0),
        };
        out.t.push(t);
        out.fhat.push(fhat);
        out.bias
            .push(lcb_at(&data, &kernels, &x, fhat).ok().map(|e| e.bias));
        out.true_bias.push(sigmoid(t) - fhat);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct RecalibrationReport {
    pub recalibrator: Recalibrator,
    pub before: ReliabilityBins,
    pub after: ReliabilityBins,
    pub ece_before: f64,
    pub ece_after: f64,
    pub p_before: f64,
    pub p_after: f64,
}

pub fn recalibration_report(
    method: &str,
    d: usize,
    n: usize,
    seed: u64,
    bins: usize,
    n_bootstrap: usize,
) -> Result<RecalibrationReport> {
    let cfg = sim_config("drop-last", d, n, seed)?;
    let calib = gen_synthetic(&cfg, 0)?;
    let test = gen_synthetic(&cfg, 1)?;
    let rec = match method {
        "platt" => fit_platt(&calib)?,
        "temperature" => fit_temperature(&calib)?,
        "isotonic" => fit_isotonic(&calib)?,
        other => return Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
    };
    let after = rec.apply(&test)?;
    let tc = TestConfig {
        n_bootstrap,
        seed,
        ..TestConfig::default()
    };
    let bins = bins.max(1);
    Ok(RecalibrationReport {
        before: reliability(&test, bins),
        after: reliability(&after, bins),
        ece_before: ece(&test, bins),
        ece_after: ece(&after, bins),
        p_before: run_test(&test, &tc)?.p_value,
        p_after: run_test(&after, &tc)?.p_value,
        recalibrator: rec,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// Simulates one dataset, tests it and returns the null histogram.
#[wasm_bindgen(js_name = nullDistribution)]
pub fn null_distribution(
    model: &str,
    d: usize,
    n: usize,
    n_bootstrap: usize,
    seed: u32,
    bins: usize,
) -> Result<String, JsError> {
    to_js(null_report(model, d, n, n_bootstrap, u64::from(seed), bins))
}

/// Estimated and true local bias along the last feature.
#[wasm_bindgen(js_name = biasProfile)]
pub fn bias_profile(
    model: &str,
    d: usize,
    n: usize,
    seed: u32,
    points: usize,
) -> Result<String, JsError> {
    to_js(profile_report(model, d, n, u64::from(seed), points))
}

/// Reliability bins and test p-values before and after recalibration.
#[wasm_bindgen(js_name = recalibrate)]
pub fn recalibrate(
    method: &str,
    d: usize,
    n: usize,
    seed: u32,
    bins: usize,
    n_bootstrap: usize,
) -> Result<String, JsError> {
    to_js(recalibration_report(
        method,
        d,
        n,
        u64::from(seed),
        bins,
        n_bootstrap,
    ))
}
