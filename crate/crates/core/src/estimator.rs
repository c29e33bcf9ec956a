//! Unbiased estimators of the squared kernel local calibration error and
//! the analytic finite-sample acceptance region.
//!
//! With residuals `e_i = y_i - fhat_i` and the product kernel
//! `W_ij = k(fhat_i, fhat_j) l(x_i, x_j)`, the estimate is the U-statistic
//!
//! ```text
//! KLCE^2 = 1 / (n (n - 1)) * sum_{i != j} e_i W_ij e_j
//! ```
//!
//! It is signed: values below zero are legitimate and are never clamped.
//! Replacing `l` by the constant kernel yields the (global) kernel
//! calibration error.

use serde::{Deserialize, Serialize};

use crate::data::AuditDataset;
use crate::error::{Error, Result};
use crate::kernels::{gram_pair, GramPair, Kernel, KernelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlceEstimate {
    pub value: f64,
    pub n: usize,
    pub score_kernel: Kernel,
    pub feature_kernel: Kernel,
}

/// Significance level and the per-term bound `B` of the Hoeffding argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub alpha_p: f64,
    pub bound_b: f64,
}

impl Default for ThresholdConfig {
    /// `B = 1` bounds every summand `|e_i W_ij e_j|` for kernels bounded by
    /// one and binary labels.
    fn default() -> Self {
        Self {
            alpha_p: 0.05,
            bound_b: 1.0,
        }
    }
}

impl ThresholdConfig {
    pub fn new(alpha_p: f64, bound_b: f64) -> Result<Self> {
        let cfg = Self { alpha_p, bound_b };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_p > 0.0 && self.alpha_p <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha_p must lie in (0, 1], got {}",
                self.alpha_p
            )));
        }
        if !(self.bound_b > 0.0 && self.bound_b.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bound B must be positive, got {}",
                self.bound_b
            )));
        }
        Ok(())
    }
}

/// `sum_{i != j} e_i W_ij e_j / (n (n - 1))` for a symmetric row-major `W`.
///
/// Only the strict upper triangle is read. The summation order is fixed:
/// rows ascending, and within a row columns ascending.
pub(crate) fn offdiag_form(w: &[f64], n: usize, e: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), n * n);
    debug_assert_eq!(e.len(), n);
    let mut total = 0.0;
    for i in 0..n {
        let row = &w[i * n + i + 1..(i + 1) * n];
        let mut acc = 0.0;
        for (m, ej) in row.iter().zip(&e[i + 1..]) {
            acc += m * ej;
        }
        total += e[i] * acc;
    }
    2.0 * total / (n * (n - 1)) as f64
}

pub(crate) const LANES: usize = 8;

/// [`offdiag_form`] for up to [`LANES`] residual vectors in one sweep over
/// `W`. Each lane performs exactly the scalar operation sequence, so the
/// results are bitwise equal to calling [`offdiag_form`] per vector.
pub(crate) fn offdiag_form_batch(w: &[f64], n: usize, vectors: &[Vec<f64>]) -> Vec<f64> {
    assert!(vectors.len() <= LANES);
    let mut packed = vec![0.0; n * LANES];
    for (b, v) in vectors.iter().enumerate() {
        debug_assert_eq!(v.len(), n);
        for (j, &x) in v.iter().enumerate() {
            packed[j * LANES + b] = x;
        }
    }
    let mut total = [0.0f64; LANES];
    for i in 0..n {
        let row = &w[i * n..(i + 1) * n];
        let mut acc = [0.0f64; LANES];
        let lanes = packed[(i + 1) * LANES..].chunks_exact(LANES);
        for (&m, lane) in row[i + 1..].iter().zip(lanes) {
            for b in 0..LANES {
                acc[b] += m * lane[b];
            }
        }
        for b in 0..LANES {
            total[b] += packed[i * LANES + b] * acc[b];
        }
    }
    let denom = (n * (n - 1)) as f64;
    total[..vectors.len()]
        .iter()
        .map(|t| 2.0 * t / denom)
        .collect()
}

fn check_gram(d: &AuditDataset, g: &GramPair) -> Result<()> {
    if g.n != d.len() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            actual: g.n,
        });
    }
    if d.len() < 2 {
        return Err(Error::TooFewRecords {
            required: 2,
            actual: d.len(),
        });
    }
    Ok(())
}

/// Unbiased KLCE² from a dataset and its Gram pair.
pub fn klce2_unbiased(d: &AuditDataset, g: &GramPair) -> Result<KlceEstimate> {
    check_gram(d, g)?;
    let w = g.product();
    Ok(KlceEstimate {
        value: offdiag_form(&w, d.len(), &d.residuals()),
        n: d.len(),
        score_kernel: g.score_kernel,
        feature_kernel: g.feature_kernel,
    })
}

/// Global kernel calibration error: KLCE² with a constant feature kernel.
pub fn kce2(d: &AuditDataset, k_spec: &KernelSpec) -> Result<KlceEstimate> {
    let g = gram_pair(d, k_spec, &KernelSpec::constant())?;
    klce2_unbiased(d, &g)
}

/// Analytic acceptance threshold `B / sqrt(n) * sqrt(ln(alpha_p^-2))`.
///
/// The null "KLCE = 0" is retained at level `alpha_p` when the estimate is
/// below this value.
pub fn acceptance_threshold(cfg: &ThresholdConfig, n: usize) -> f64 {
    let ln = (1.0 / (cfg.alpha_p * cfg.alpha_p)).ln();
    cfg.bound_b / (n as f64).sqrt() * ln.max(0.0).sqrt()
}

/// Two-sided Hoeffding deviation bound `2 exp(-eps^2 n / (2 B^2))`, clamped
/// to `[0, 1]`.
pub fn hoeffding_tail(cfg: &ThresholdConfig, n: usize, eps: f64) -> f64 {
    let b = cfg.bound_b;
    (2.0 * (-eps * eps * n as f64 / (2.0 * b * b)).exp()).clamp(0.0, 1.0)
}
