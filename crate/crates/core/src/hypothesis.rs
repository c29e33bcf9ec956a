//! Null distributions, p-values and the end-to-end local calibration test.
//!
//! The Gram matrices are built once from the observed data, with bandwidths
//! resolved before any resampling, and are shared by all null replicates.
//! Two null generators are available:
//!
//! * [`NullMethod::Consistency`] (default) redraws every label as
//!   `y* ~ Bernoulli(fhat_i)`. Under local calibration this is exactly the
//!   conditional law of the labels given `(fhat, x)`, so the Monte Carlo
//!   p-value has the nominal level.
//! * [`NullMethod::ResidualBootstrap`] resamples the residual vector with
//!   replacement, decoupling residuals from their rows. The resampled mean
//!   residual inflates the null, so this test is conservative.
//!
//! The p-value counts null replicates strictly greater than the observed
//! statistic.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::AuditDataset;
use crate::error::{Error, Result};
use crate::estimator::{
    acceptance_threshold, offdiag_form, offdiag_form_batch, ThresholdConfig, LANES,
};
use crate::kernels::{gram_pair_with, Bandwidth, GramPair, Kernel, KernelFamily, KernelSpec};
use crate::rng::null_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullMethod {
    #[default]
    Consistency,
    ResidualBootstrap,
}

impl FromStr for NullMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consistency" => Ok(Self::Consistency),
            "residual" | "residual-bootstrap" => Ok(Self::ResidualBootstrap),
            other => Err(Error::InvalidConfig(format!(
                "unknown null method `{other}`"
            ))),
        }
    }
}

impl fmt::Display for NullMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Consistency => "consistency",
            Self::ResidualBootstrap => "residual-bootstrap",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub n_bootstrap: usize,
    pub alpha_p: f64,
    pub seed: u64,
    pub k_spec: KernelSpec,
    pub l_spec: KernelSpec,
    pub null_method: NullMethod,
    /// Per-term bound used for the analytic threshold.
    pub bound_b: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            n_bootstrap: 500,
            alpha_p: 0.05,
            seed: 0,
            k_spec: KernelSpec::rbf_median(),
            l_spec: KernelSpec::rbf_median(),
            null_method: NullMethod::Consistency,
            bound_b: 1.0,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bootstrap == 0 {
            return Err(Error::InvalidConfig(
                "n_bootstrap must be at least 1".into(),
            ));
        }
        if !(self.alpha_p > 0.0 && self.alpha_p < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha_p must lie in (0, 1), got {}",
                self.alpha_p
            )));
        }
        self.k_spec.validate()?;
        self.l_spec.validate()?;
        self.threshold_config().validate()
    }

    pub fn threshold_config(&self) -> ThresholdConfig {
        ThresholdConfig {
            alpha_p: self.alpha_p,
            bound_b: self.bound_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub klce2_data: f64,
    pub null_samples: Vec<f64>,
    pub p_value: f64,
    pub reject_at_alpha: bool,
    pub analytic_threshold: f64,
    pub n: usize,
    pub score_kernel: Kernel,
    pub feature_kernel: Kernel,
    pub config: TestConfig,
    pub warnings: Vec<String>,
}

impl TestResult {
    /// Linear-interpolation quantile of the null samples.
    pub fn null_quantile(&self, q: f64) -> f64 {
        quantile(&self.null_samples, q)
    }

    /// Whether the estimate lies in the analytic acceptance region.
    pub fn within_analytic_region(&self) -> bool {
        self.klce2_data < self.analytic_threshold
    }
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn quantile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Fraction of null samples strictly greater than `data_stat`.
pub fn p_value(data_stat: f64, null_samples: &[f64]) -> Result<f64> {
    if null_samples.is_empty() {
        return Err(Error::EmptyNull);
    }
    let exceed = null_samples.iter().filter(|&&s| s > data_stat).count();
    Ok(exceed as f64 / null_samples.len() as f64)
}

/// Runs `n_bootstrap` replicates in batches; replicate `r` draws its
/// residual vector from stream `r`.
fn simulate_null<F>(w: &[f64], n: usize, cfg: &TestConfig, draw: F) -> Vec<f64>
where
    F: Fn(&mut crate::rng::StreamRng) -> Vec<f64> + Sync,
{
    let batches: Vec<std::ops::Range<usize>> = (0..cfg.n_bootstrap)
        .step_by(LANES)
        .map(|start| start..(start + LANES).min(cfg.n_bootstrap))
        .collect();
    let run_batch = |range: &std::ops::Range<usize>| -> Vec<f64> {
        let vectors: Vec<Vec<f64>> = range
            .clone()
            .map(|r| draw(&mut null_rng(cfg.seed, r as u64)))
            .collect();
        offdiag_form_batch(w, n, &vectors)
    };
    #[cfg(feature = "parallel")]
    let out: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        batches.par_iter().map(run_batch).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let out: Vec<Vec<f64>> = batches.iter().map(run_batch).collect();
    out.into_iter().flatten().collect()
}

fn check_inputs(d: &AuditDataset, g: &GramPair, cfg: &TestConfig) -> Result<()> {
    cfg.validate()?;
    if g.n != d.len() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            actual: g.n,
        });
    }
    Ok(())
}

/// Residual-resampling null: each replicate draws `n` residuals i.i.d. with
/// replacement from `e` and evaluates the off-diagonal statistic with the
/// Gram matrices held fixed.
pub fn bootstrap_null(d: &AuditDataset, g: &GramPair, cfg: &TestConfig) -> Result<Vec<f64>> {
    check_inputs(d, g, cfg)?;
    let e = d.residuals();
    let n = d.len();
    Ok(simulate_null(&g.product(), n, cfg, |rng| {
        (0..n).map(|_| e[rng.gen_range(0..n)]).collect()
    }))
}

/// Consistency-resampling null: each replicate redraws the labels as
/// `y*_i ~ Bernoulli(fhat_i)` (via `U[0,1) < fhat_i`) and uses the residuals
/// `y*_i - fhat_i`.
pub fn consistency_null(d: &AuditDataset, g: &GramPair, cfg: &TestConfig) -> Result<Vec<f64>> {
    check_inputs(d, g, cfg)?;
    let p = d.scores();
    Ok(simulate_null(&g.product(), d.len(), cfg, |rng| {
        p.iter()
            .map(|&pi| {
                let y = if rng.gen::<f64>() < pi { 1.0 } else { 0.0 };
                y - pi
            })
            .collect()
    }))
}

/// Null samples for the configured method.
pub fn null_samples(d: &AuditDataset, g: &GramPair, cfg: &TestConfig) -> Result<Vec<f64>> {
    match cfg.null_method {
        NullMethod::Consistency => consistency_null(d, g, cfg),
        NullMethod::ResidualBootstrap => bootstrap_null(d, g, cfg),
    }
}

fn resolve_or_fallback(
    spec: &KernelSpec,
    points: &[f64],
    dim: usize,
    what: &str,
    warnings: &mut Vec<String>,
) -> Result<Kernel> {
    match spec.resolve(points, dim) {
        Err(Error::DegenerateBandwidth)
            if spec.family == KernelFamily::Rbf
                && matches!(spec.bandwidth, Bandwidth::Median { .. }) =>
        {
            warnings.push(format!(
                "all {what} are identical; median bandwidth undefined, using 1 (kernel is constant on this sample)"
            ));
            Kernel::rbf(1.0)
        }
        other => other,
    }
}

/// The full test: Gram pair, data statistic, null samples, p-value and the
/// analytic threshold.
///
/// An observed statistic of exactly zero never rejects, and is flagged with
/// a warning, since the strict-inequality p-value would otherwise be 0 for a
/// perfect model.
pub fn run_test(d: &AuditDataset, cfg: &TestConfig) -> Result<TestResult> {
    cfg.validate()?;
    let (k, l, warnings) = resolve_with_fallback(d, &cfg.k_spec, &cfg.l_spec)?;
    let g = gram_pair_with(d, k, l);
    run_test_with_gram(d, &g, cfg, warnings)
}

/// Resolves the score and feature kernels on `d`. A median bandwidth on
/// identical points falls back to 1 and records a warning instead of failing.
pub fn resolve_with_fallback(
    d: &AuditDataset,
    k_spec: &KernelSpec,
    l_spec: &KernelSpec,
) -> Result<(Kernel, Kernel, Vec<String>)> {
    let mut warnings = Vec::new();
    let k = resolve_or_fallback(k_spec, d.scores(), 1, "scores", &mut warnings)?;
    let l = resolve_or_fallback(
        l_spec,
        d.feature_matrix(),
        d.dim(),
        "feature vectors",
        &mut warnings,
    )?;
    Ok((k, l, warnings))
}

/// [`run_test`] on a prebuilt Gram pair.
pub fn run_test_with_gram(
    d: &AuditDataset,
    g: &GramPair,
    cfg: &TestConfig,
    mut warnings: Vec<String>,
) -> Result<TestResult> {
    check_inputs(d, g, cfg)?;
    let n = d.len();
    let w = g.product();
    let klce2_data = offdiag_form(&w, n, &d.residuals());
    let null = null_samples(d, g, cfg)?;
    let p = p_value(klce2_data, &null)?;

    let mut reject = p < cfg.alpha_p;
    if klce2_data == 0.0 {
        warnings.push(
            "observed KLCE^2 is exactly zero (degenerate null); null hypothesis retained".into(),
        );
        reject = false;
    } else if null.iter().all(|&s| s == null[0]) {
        warnings.push("null distribution is degenerate (all replicates equal)".into());
    }

    Ok(TestResult {
        klce2_data,
        null_samples: null,
        p_value: p,
        reject_at_alpha: reject,
        analytic_threshold: acceptance_threshold(&cfg.threshold_config(), n),
        n,
        score_kernel: g.score_kernel,
        feature_kernel: g.feature_kernel,
        config: *cfg,
        warnings,
    })
}
