//! Post-hoc recalibration maps: Platt scaling, temperature scaling and
//! isotonic regression.
//!
//! Platt and temperature scaling act on `logit(fhat)` with scores clipped
//! to `[CLIP, 1 - CLIP]` first. Isotonic regression fits a nondecreasing
//! step function by pool-adjacent-violators.

use serde::{Deserialize, Serialize};

use crate::data::AuditDataset;
use crate::error::{Error, Result};

pub const CLIP: f64 = 1e-6;

const PLATT_MAX_ITER: usize = 100;
const PLATT_TOL: f64 = 1e-8;
const T_MIN: f64 = 1e-2;
const T_MAX: f64 = 1e2;
const GOLDEN_WIDTH: f64 = 1e-6;

/// A fitted recalibration map. Serializes as `{"kind": ..., "parameters": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "lowercase")]
pub enum Recalibrator {
    /// `sigmoid(a * logit(p) + b)`
    Platt { a: f64, b: f64 },
    /// `sigmoid(logit(p) / t)`
    Temperature { t: f64 },
    /// Step function: `values[i]` on `[breakpoints[i], breakpoints[i+1])`,
    /// flat beyond both ends.
    Isotonic {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(CLIP, 1.0 - CLIP);
    (p / (1.0 - p)).ln()
}

/// `log(1 + exp(s))` without overflow.
fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// Mean Bernoulli negative log-likelihood of `sigmoid(s_i)` against `y_i`.
fn mean_nll(d: &AuditDataset, s: impl Fn(f64) -> f64) -> f64 {
    d.iter()
        .map(|r| {
            let si = s(logit(r.fhat));
            softplus(si) - f64::from(r.y) * si
        })
        .sum::<f64>()
        / d.len() as f64
}

pub fn platt_nll(d: &AuditDataset, a: f64, b: f64) -> f64 {
    mean_nll(d, |z| a * z + b)
}

pub fn temperature_nll(d: &AuditDataset, t: f64) -> f64 {
    mean_nll(d, |z| z / t)
}

fn require_both_classes(d: &AuditDataset) -> Result<()> {
    let pos = d.labels().iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == d.len() {
        Err(Error::SingleClass)
    } else {
        Ok(())
    }
}

/// Damped Newton descent on the Platt negative log-likelihood, started at
/// `(a, b) = (1, 0)`. Stops when the gradient norm drops below 1e-8.
pub fn fit_platt(calib: &AuditDataset) -> Result<Recalibrator> {
    require_both_classes(calib)?;
    let z: Vec<f64> = calib.scores().iter().map(|&p| logit(p)).collect();
    let y: Vec<f64> = calib.labels().iter().map(|&y| f64::from(y)).collect();
    let n = z.len() as f64;
    let (mut a, mut b) = (1.0, 0.0);
    let mut f = platt_nll(calib, a, b);
    let mut grad_norm = f64::INFINITY;
    for _ in 0..PLATT_MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&zi, &yi) in z.iter().zip(&y) {
            let p = sigmoid(a * zi + b);
            let r = p - yi;
            let w = p * (1.0 - p);
            ga += r * zi;
            gb += r;
            haa += w * zi * zi;
            hab += w * zi;
            hbb += w;
        }
        let (ga, gb) = (ga / n, gb / n);
        let (haa, hab, hbb) = (haa / n + 1e-12, hab / n, hbb / n + 1e-12);
        grad_norm = ga.hypot(gb);
        if grad_norm < PLATT_TOL {
            return Ok(Recalibrator::Platt { a, b });
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 0.0 {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        let mut step = 1.0;
        loop {
            let (na, nb) = (a - step * da, b - step * db);
            let nf = platt_nll(calib, na, nb);
            if nf <= f || step < 1e-10 {
                a = na;
                b = nb;
                f = nf;
                break;
            }
            step *= 0.5;
        }
    }
    Err(Error::NotConverged {
        iterations: PLATT_MAX_ITER,
        gradient_norm: grad_norm,
    })
}

/// Golden-section search for the temperature minimizing the NLL on
/// `[0.01, 100]`.
pub fn fit_temperature(calib: &AuditDataset) -> Result<Recalibrator> {
    require_both_classes(calib)?;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (T_MIN, T_MAX);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = temperature_nll(calib, c);
    let mut fd = temperature_nll(calib, d);
    while hi - lo > GOLDEN_WIDTH {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = temperature_nll(calib, c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = temperature_nll(calib, d);
        }
    }
    Ok(Recalibrator::Temperature { t: 0.5 * (lo + hi) })
}

/// Weighted pool-adjacent-violators on an already ordered sequence.
/// Returns the nondecreasing least-squares fit, one value per input.
pub fn pava(y: &[f64], w: &[f64]) -> Vec<f64> {
    assert_eq!(y.len(), w.len());
    // (mean, weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        let mut cur = (yi, wi, 1usize);
        while let Some(&(m, pw, len)) = blocks.last() {
            if m <= cur.0 {
                break;
            }
            blocks.pop();
            let tw = pw + cur.1;
            cur = ((m * pw + cur.0 * cur.1) / tw, tw, len + cur.2);
        }
        blocks.push(cur);
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, len)| std::iter::repeat_n(m, len))
        .collect()
}

/// Isotonic regression of labels on scores. Records sharing a score are
/// pooled before PAVA so equal inputs map to equal outputs.
pub fn fit_isotonic(calib: &AuditDataset) -> Result<Recalibrator> {
    let mut idx: Vec<usize> = (0..calib.len()).collect();
    let p = calib.scores();
    idx.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
    let mut breakpoints: Vec<f64> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for &i in &idx {
        let y = f64::from(calib.labels()[i]);
        if breakpoints.last() == Some(&p[i]) {
            *sums.last_mut().unwrap() += y;
            *weights.last_mut().unwrap() += 1.0;
        } else {
            breakpoints.push(p[i]);
            sums.push(y);
            weights.push(1.0);
        }
    }
    let means: Vec<f64> = sums.iter().zip(&weights).map(|(s, w)| s / w).collect();
    let values = pava(&means, &weights);
    Ok(Recalibrator::Isotonic {
        breakpoints,
        values,
    })
}

impl Recalibrator {
    pub fn is_fitted(&self) -> bool {
        match self {
            Self::Platt { a, b } => a.is_finite() && b.is_finite(),
            Self::Temperature { t } => *t > 0.0 && t.is_finite(),
            Self::Isotonic {
                breakpoints,
                values,
            } => {
                !breakpoints.is_empty()
                    && breakpoints.len() == values.len()
                    && values.windows(2).all(|w| w[0] <= w[1])
                    && values.iter().all(|v| (0.0..=1.0).contains(v))
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Platt { .. } => "platt",
            Self::Temperature { .. } => "temperature",
            Self::Isotonic { .. } => "isotonic",
        }
    }

    /// Maps one score. The caller must have checked [`Self::is_fitted`].
    pub fn map_score(&self, p: f64) -> f64 {
        match self {
            Self::Platt { a, b } => sigmoid(a * logit(p) + b),
            Self::Temperature { t } => sigmoid(logit(p) / t),
            Self::Isotonic {
                breakpoints,
                values,
            } => {
                let k = breakpoints.partition_point(|&bp| bp <= p);
                values[k.saturating_sub(1)]
            }
        }
    }

    pub fn apply(&self, d: &AuditDataset) -> Result<AuditDataset> {
        if !self.is_fitted() {
            return Err(Error::NotFitted);
        }
        d.with_scores(d.scores().iter().map(|&p| self.map_score(p)).collect())
    }
}
