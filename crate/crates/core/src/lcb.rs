//! Local calibration bias: a kernel-weighted average of residuals around a
//! query point `(x', fhat')`,
//!
//! ```text
//! LCB(x', fhat') = sum_i e_i k(fhat_i, fhat') l(x_i, x')
//!                / sum_i     k(fhat_i, fhat') l(x_i, x')
//! ```
//!
//! Every record contributes, including one identical to the query. Adding
//! the bias to the query score gives an individually debiased probability,
//! clamped to `[0, 1]`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::AuditDataset;
use crate::error::{Error, Result};
use crate::kernels::{sq_dist, Kernel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcbEstimate {
    pub query_x: Vec<f64>,
    pub query_fhat: f64,
    pub bias: f64,
    pub debiased_fhat: f64,
    /// Denominator of the estimator: total kernel weight at the query.
    pub effective_weight: f64,
}

/// Score kernel `k` and feature kernel `l`, both resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcbKernels {
    pub score: Kernel,
    pub feature: Kernel,
}

pub fn lcb_at(
    d: &AuditDataset,
    kernels: &LcbKernels,
    query_x: &[f64],
    query_fhat: f64,
) -> Result<LcbEstimate> {
    if query_x.len() != d.dim() {
        return Err(Error::DimensionMismatch {
            expected: d.dim(),
            actual: query_x.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for r in d.iter() {
        let df = r.fhat - query_fhat;
        let w = kernels.score.from_sq_dist(df * df)
            * kernels.feature.from_sq_dist(sq_dist(r.x, query_x));
        num += (f64::from(r.y) - r.fhat) * w;
        den += w;
    }
    if den.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::NoSupport);
    }
    let bias = num / den;
    Ok(LcbEstimate {
        query_x: query_x.to_vec(),
        query_fhat,
        bias,
        debiased_fhat: (query_fhat + bias).clamp(0.0, 1.0),
        effective_weight: den,
    })
}

/// Evaluates [`lcb_at`] at each query. Failures are reported per query.
pub fn lcb_profile<'q, I>(
    d: &AuditDataset,
    kernels: &LcbKernels,
    queries: I,
) -> Vec<Result<LcbEstimate>>
where
    I: IntoIterator<Item = (&'q [f64], f64)>,
{
    let queries: Vec<(&[f64], f64)> = queries.into_iter().collect();
    let eval = |&(x, f): &(&[f64], f64)| lcb_at(d, kernels, x, f);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        queries.par_iter().map(eval).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        queries.iter().map(eval).collect()
    }
}

/// [`lcb_profile`] with the dataset's own records as queries.
pub fn lcb_records(d: &AuditDataset, kernels: &LcbKernels) -> Vec<Result<LcbEstimate>> {
    lcb_profile(d, kernels, d.iter().map(|r| (r.x, r.fhat)))
}

/// Ordinary least-squares polynomial fit; coefficients lowest order first.
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Result<Vec<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < degree + 1 {
        return Err(Error::TooFewRecords {
            required: degree + 1,
            actual: xs.len(),
        });
    }
    let v = DMatrix::from_fn(xs.len(), degree + 1, |i, j| xs[i].powi(j as i32));
    let y = DVector::from_column_slice(ys);
    let svd = v.svd(true, true);
    let coef = svd
        .solve(&y, 1e-13)
        .map_err(|e| Error::InvalidConfig(format!("least-squares solve failed: {e}")))?;
    Ok(coef.iter().copied().collect())
}

/// How estimates are split into groups for trend fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    All,
    /// One group per distinct value of this feature.
    Feature(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub group: String,
    pub n: usize,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupTrend {
    pub axis: usize,
    pub degree: usize,
    pub fits: Vec<GroupFit>,
    pub warnings: Vec<String>,
}

/// Total order on feature values used as group keys.
#[derive(Debug, Clone, Copy)]
struct FeatureValue(f64);

impl PartialEq for FeatureValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for FeatureValue {}
impl PartialOrd for FeatureValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for FeatureValue {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}
impl fmt::Display for FeatureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-group polynomial fit of bias against feature `axis`.
pub fn group_trend(
    estimates: &[LcbEstimate],
    key: GroupKey,
    axis: usize,
    degree: usize,
) -> Result<GroupTrend> {
    if let Some(e) = estimates.iter().find(|e| e.query_x.len() <= axis) {
        return Err(Error::DimensionMismatch {
            expected: axis + 1,
            actual: e.query_x.len(),
        });
    }
    match key {
        GroupKey::All => group_trend_by(estimates, |_| "all".to_string(), axis, degree),
        GroupKey::Feature(j) => {
            if let Some(e) = estimates.iter().find(|e| e.query_x.len() <= j) {
                return Err(Error::DimensionMismatch {
                    expected: j + 1,
                    actual: e.query_x.len(),
                });
            }
            group_trend_by(estimates, |e| FeatureValue(e.query_x[j]), axis, degree)
        }
    }
}

/// Like [`group_trend`] with an arbitrary grouping function. Groups with
/// fewer than `degree + 1` points are skipped with a warning.
pub fn group_trend_by<K, F>(
    estimates: &[LcbEstimate],
    key: F,
    axis: usize,
    degree: usize,
) -> Result<GroupTrend>
where
    K: Ord + fmt::Display,
    F: Fn(&LcbEstimate) -> K,
{
    let mut groups: BTreeMap<K, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for e in estimates {
        let x = *e.query_x.get(axis).ok_or(Error::DimensionMismatch {
            expected: axis + 1,
            actual: e.query_x.len(),
        })?;
        let entry = groups.entry(key(e)).or_default();
        entry.0.push(x);
        entry.1.push(e.bias);
    }
    let mut trend = GroupTrend {
        axis,
        degree,
        ..GroupTrend::default()
    };
    for (k, (xs, ys)) in groups {
        if xs.len() < degree + 1 {
            trend.warnings.push(format!(
                "group {k}: {} points, need {} for a degree-{degree} fit; skipped",
                xs.len(),
                degree + 1
            ));
            continue;
        }
        trend.fits.push(GroupFit {
            group: k.to_string(),
            n: xs.len(),
            coefficients: polyfit(&xs, &ys, degree)?,
        });
    }
    Ok(trend)
}
