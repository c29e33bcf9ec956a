//! Synthetic audits with a known answer, and Type-I / Type-II experiments.
//!
//! Features are i.i.d. standard normals `x in R^d` and labels are drawn as
//! `y ~ Bernoulli(sigmoid(x_1 + ... + x_d))`. The `Bayes` model reports the
//! true probability and is locally calibrated by construction. `DropLast`
//! reports `sigmoid(x_1 + ... + x_{d-1})`: it is calibrated with respect to
//! the first `d - 1` coordinates but not along `x_d`. Tests always audit on
//! the full `x`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::data::AuditDataset;
use crate::error::{Error, Result};
use crate::hypothesis::{run_test, NullMethod, TestConfig};
use crate::kernels::KernelSpec;
use crate::recalibration::sigmoid;
use crate::rng::{derive_seed, domain, stream_rng, NormalSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimModel {
    Bayes,
    DropLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub d: usize,
    pub n: usize,
    pub replicates: usize,
    pub alpha_p: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
    pub model: SimModel,
    pub k_spec: KernelSpec,
    pub l_spec: KernelSpec,
    pub null_method: NullMethod,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            d: 2,
            n: 500,
            replicates: 1000,
            alpha_p: 0.05,
            n_bootstrap: 500,
            seed: 0,
            model: SimModel::Bayes,
            k_spec: KernelSpec::rbf_median(),
            l_spec: KernelSpec::rbf_median(),
            null_method: NullMethod::Consistency,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidConfig(
                "dimension d must be at least 1".into(),
            ));
        }
        if self.model == SimModel::DropLast && self.d < 2 {
            return Err(Error::InvalidConfig(
                "the drop-last model needs d >= 2".into(),
            ));
        }
        if self.n < 2 {
            return Err(Error::InvalidConfig(
                "sample size must be at least 2".into(),
            ));
        }
        self.test_config(0).validate()
    }

    /// Test settings for replicate `replicate`; its null stream seed is
    /// derived from the experiment seed.
    pub fn test_config(&self, replicate: u64) -> TestConfig {
        TestConfig {
            n_bootstrap: self.n_bootstrap,
            alpha_p: self.alpha_p,
            seed: derive_seed(self.seed, domain::TEST_SEED, replicate),
            k_spec: self.k_spec,
            l_spec: self.l_spec,
            null_method: self.null_method,
            bound_b: 1.0,
        }
    }
}

/// A synthetic dataset together with the true `P(y = 1 | x)` per record.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub data: AuditDataset,
    pub true_prob: Vec<f64>,
}

/// Draws the dataset for `replicate` from the stream `(seed, replicate)`.
/// Per record: `d` normals, then one uniform for the label.
pub fn gen_synthetic_with_truth(cfg: &SimConfig, replicate: u64) -> Result<SyntheticSample> {
    cfg.validate()?;
    let mut sampler = NormalSampler::new(stream_rng(cfg.seed, domain::DATA, replicate));
    let d = cfg.d;
    let mut features = Vec::with_capacity(cfg.n * d);
    let mut labels = Vec::with_capacity(cfg.n);
    let mut scores = Vec::with_capacity(cfg.n);
    let mut true_prob = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let start = features.len();
        for _ in 0..d {
            features.push(sampler.sample());
        }
        let x = &features[start..];
        let p = sigmoid(x.iter().sum());
        let y = u8::from(sampler.uniform() < p);
        let fhat = match cfg.model {
            SimModel::Bayes => p,
            SimModel::DropLast => sigmoid(x[..d - 1].iter().sum()),
        };
        labels.push(y);
        scores.push(fhat);
        true_prob.push(p);
    }
    let names = (1..=d).map(|i| format!("x{i}")).collect();
    Ok(SyntheticSample {
        data: AuditDataset::from_columns(names, features, labels, scores)?,
        true_prob,
    })
}

pub fn gen_synthetic(cfg: &SimConfig, replicate: u64) -> Result<AuditDataset> {
    Ok(gen_synthetic_with_truth(cfg, replicate)?.data)
}

/// Clopper–Pearson interval for `k` successes in `n` trials.
pub fn clopper_pearson(k: usize, n: usize, confidence: f64) -> (f64, f64) {
    let a = 1.0 - confidence;
    let lo = if k == 0 {
        0.0
    } else {
        Beta::new(k as f64, (n - k + 1) as f64)
            .expect("valid beta shape")
            .inverse_cdf(a / 2.0)
    };
    let hi = if k == n {
        1.0
    } else {
        Beta::new((k + 1) as f64, (n - k) as f64)
            .expect("valid beta shape")
            .inverse_cdf(1.0 - a / 2.0)
    };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub d: usize,
    pub n: usize,
    /// Bandwidth multiplier relative to the configured kernels.
    pub bandwidth_scale: f64,
    pub replicates: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    /// Exact 95% interval for the rejection rate.
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl SimRow {
    fn from_counts(
        d: usize,
        n: usize,
        bandwidth_scale: f64,
        rejections: usize,
        replicates: usize,
    ) -> Self {
        let (ci_lo, ci_hi) = clopper_pearson(rejections, replicates, 0.95);
        Self {
            d,
            n,
            bandwidth_scale,
            replicates,
            rejections,
            rejection_rate: rejections as f64 / replicates as f64,
            ci_lo,
            ci_hi,
        }
    }

    /// Fraction of replicates that failed to reject.
    pub fn acceptance_rate(&self) -> f64 {
        1.0 - self.rejection_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    Type1,
    Type2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mode: SimMode,
    pub alpha_p: f64,
    pub rows: Vec<SimRow>,
}

impl SimReport {
    pub fn row(&self, d: usize, n: usize) -> Option<&SimRow> {
        self.rows.iter().find(|r| r.d == d && r.n == n)
    }

    /// Type-I CSV: `d,N,bandwidth_scale,rejection_rate,ci_lo,ci_hi`.
    /// Type-II CSV: `d,N,rejection_rate,ci_lo,ci_hi`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        match self.mode {
            SimMode::Type1 => w.write_record([
                "d",
                "N",
                "bandwidth_scale",
                "rejection_rate",
                "ci_lo",
                "ci_hi",
            ])?,
            SimMode::Type2 => w.write_record(["d", "N", "rejection_rate", "ci_lo", "ci_hi"])?,
        }
        for r in &self.rows {
            let mut rec = vec![r.d.to_string(), r.n.to_string()];
            if self.mode == SimMode::Type1 {
                rec.push(r.bandwidth_scale.to_string());
            }
            rec.extend(
                [r.rejection_rate, r.ci_lo, r.ci_hi]
                    .iter()
                    .map(|v| v.to_string()),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the test on replicate `r` and reports whether it rejected.
pub fn replicate_rejects(cfg: &SimConfig, r: u64) -> Result<bool> {
    let data = gen_synthetic(cfg, r)?;
    Ok(run_test(&data, &cfg.test_config(r))?.reject_at_alpha)
}

fn rejection_count(cfg: &SimConfig) -> Result<usize> {
    cfg.validate()?;
    let run = |r: u64| replicate_rejects(cfg, r);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<bool>> = {
        use rayon::prelude::*;
        (0..cfg.replicates as u64)
            .into_par_iter()
            .map(run)
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<bool>> = (0..cfg.replicates as u64).map(run).collect();
    let mut count = 0;
    for r in results {
        count += usize::from(r?);
    }
    Ok(count)
}

impl KernelSpec {
    /// Multiplies the bandwidth (fixed value or median scale) by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        use crate::kernels::Bandwidth;
        let bandwidth = match self.bandwidth {
            Bandwidth::Fixed(v) => Bandwidth::Fixed(v * s),
            Bandwidth::Median { scale } => Bandwidth::Median { scale: scale * s },
        };
        Self { bandwidth, ..*self }
    }
}

/// Rejection rates of the Bayes model over a grid of bandwidth multipliers
/// and sample sizes. `cfg.model` is ignored.
pub fn type1_experiment(
    cfg: &SimConfig,
    bandwidth_scales: &[f64],
    n_grid: &[usize],
) -> Result<SimReport> {
    let mut rows = Vec::new();
    for &n in n_grid {
        for &s in bandwidth_scales {
            let c = SimConfig {
                n,
                model: SimModel::Bayes,
                k_spec: cfg.k_spec.scaled(s),
                l_spec: cfg.l_spec.scaled(s),
                ..*cfg
            };
            rows.push(SimRow::from_counts(
                c.d,
                n,
                s,
                rejection_count(&c)?,
                c.replicates,
            ));
        }
    }
    Ok(SimReport {
        mode: SimMode::Type1,
        alpha_p: cfg.alpha_p,
        rows,
    })
}

/// Rejection rates of the drop-last model over `(d, N)`; the Type-II error
/// of a cell is its [`SimRow::acceptance_rate`]. `cfg.model` is ignored.
pub fn type2_experiment(cfg: &SimConfig, d_grid: &[usize], n_grid: &[usize]) -> Result<SimReport> {
    let mut rows = Vec::new();
    for &d in d_grid {
        for &n in n_grid {
            let c = SimConfig {
                d,
                n,
                model: SimModel::DropLast,
                ..*cfg
            };
            rows.push(SimRow::from_counts(
                d,
                n,
                1.0,
                rejection_count(&c)?,
                c.replicates,
            ));
        }
    }
    Ok(SimReport {
        mode: SimMode::Type2,
        alpha_p: cfg.alpha_p,
        rows,
    })
}

/// Score-weighted mean `sum_i I_i fhat_i / sum_i fhat_i`, the plug-in
/// estimate of `E[I(x) | y = 1]`. Unbiased only for locally calibrated
/// scores.
pub fn inference_estimate(d: &AuditDataset, values: &[f64]) -> Result<f64> {
    if values.len() != d.len() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            actual: values.len(),
        });
    }
    let total: f64 = d.scores().iter().sum();
    if total.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::ZeroWeight);
    }
    let num: f64 = values.iter().zip(d.scores()).map(|(v, p)| v * p).sum();
    Ok(num / total)
}

/// Average ranks (1-based), ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// `NaN` when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}
