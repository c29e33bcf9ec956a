//! Kernels on the score space and on the audit-feature space.
//!
//! The RBF convention is `exp(-|u - v|^2 / (2 sigma^2))` with `sigma` in
//! distance units. The product kernel on (score, features) pairs is
//! realized as the elementwise product of the two Gram matrices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::AuditDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Rbf,
    Constant,
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbf" | "gaussian" => Ok(Self::Rbf),
            "constant" | "const" => Ok(Self::Constant),
            other => Err(Error::InvalidKernel(format!(
                "unknown kernel family `{other}`"
            ))),
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rbf => "rbf",
            Self::Constant => "constant",
        })
    }
}

/// How the RBF bandwidth is chosen.
///
/// Textual form: a positive literal (`"0.25"`), `"median"`, or
/// `"median:<scale>"` for a multiple of the median heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    Median { scale: f64 },
}

impl Bandwidth {
    pub const MEDIAN: Self = Self::Median { scale: 1.0 };
}

impl Default for Bandwidth {
    fn default() -> Self {
        Self::MEDIAN
    }
}

impl FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let positive = |v: &str| -> Result<f64> {
            match v.parse::<f64>() {
                Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
                _ => Err(Error::InvalidKernel(format!(
                    "bandwidth `{v}` is not a positive number"
                ))),
            }
        };
        if s.eq_ignore_ascii_case("median") {
            Ok(Self::MEDIAN)
        } else if let Some(scale) = s.strip_prefix("median:") {
            Ok(Self::Median {
                scale: positive(scale)?,
            })
        } else {
            Ok(Self::Fixed(positive(s)?))
        }
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(v) => write!(f, "{v}"),
            Self::Median { scale } if *scale == 1.0 => f.write_str("median"),
            Self::Median { scale } => write!(f, "median:{scale}"),
        }
    }
}

impl Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Bandwidth::from_str(&v.to_string()),
            Raw::Text(s) => Bandwidth::from_str(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Kernel family plus bandwidth rule, before the bandwidth is resolved
/// against data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    #[serde(default)]
    pub bandwidth: Bandwidth,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::rbf_median()
    }
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> Self {
        Self {
            family: KernelFamily::Rbf,
            bandwidth: Bandwidth::Fixed(sigma),
        }
    }

    pub fn rbf_median() -> Self {
        Self {
            family: KernelFamily::Rbf,
            bandwidth: Bandwidth::MEDIAN,
        }
    }

    pub fn constant() -> Self {
        Self {
            family: KernelFamily::Constant,
            bandwidth: Bandwidth::MEDIAN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.bandwidth {
            Bandwidth::Fixed(v) => v > 0.0 && v.is_finite(),
            Bandwidth::Median { scale } => scale > 0.0 && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidKernel(format!(
                "invalid bandwidth {}",
                self.bandwidth
            )))
        }
    }

    /// Fixes the bandwidth. `points` is row-major with `dim` coordinates per
    /// point; it is only inspected for the median rule of an RBF kernel.
    pub fn resolve(&self, points: &[f64], dim: usize) -> Result<Kernel> {
        self.validate()?;
        match (self.family, self.bandwidth) {
            (KernelFamily::Constant, _) => Ok(Kernel::constant()),
            (KernelFamily::Rbf, Bandwidth::Fixed(sigma)) => Kernel::rbf(sigma),
            (KernelFamily::Rbf, Bandwidth::Median { scale }) => {
                Kernel::rbf(scale * median_heuristic(points, dim)?)
            }
        }
    }
}

/// A kernel with a concrete bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    /// Ignored for the constant kernel.
    pub sigma: f64,
}

impl Kernel {
    pub fn rbf(sigma: f64) -> Result<Self> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(Self {
                family: KernelFamily::Rbf,
                sigma,
            })
        } else {
            Err(Error::InvalidKernel(format!(
                "RBF bandwidth must be positive, got {sigma}"
            )))
        }
    }

    pub fn constant() -> Self {
        Self {
            family: KernelFamily::Constant,
            sigma: 1.0,
        }
    }

    /// Kernel value as a function of the squared distance.
    #[inline]
    pub fn from_sq_dist(&self, d2: f64) -> f64 {
        match self.family {
            KernelFamily::Rbf => (-d2 / (2.0 * self.sigma * self.sigma)).exp(),
            KernelFamily::Constant => 1.0,
        }
    }

    pub fn eval(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        if u.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: u.len(),
                actual: v.len(),
            });
        }
        Ok(self.from_sq_dist(sq_dist(u, v)))
    }
}

/// Evaluates `k(u, v)`.
pub fn kernel_eval(kernel: &Kernel, u: &[f64], v: &[f64]) -> Result<f64> {
    kernel.eval(u, v)
}

#[inline]
pub(crate) fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Median of the `n(n-1)/2` pairwise Euclidean distances.
///
/// For an even number of pairs the two middle values are averaged. If more
/// than half of the pairs coincide the plain median is zero, and the median
/// of the strictly positive distances is returned instead.
pub fn median_heuristic(points: &[f64], dim: usize) -> Result<f64> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: points.len(),
        });
    }
    let n = points.len() / dim;
    if n < 2 {
        return Err(Error::TooFewRecords {
            required: 2,
            actual: n,
        });
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let u = &points[i * dim..(i + 1) * dim];
        for j in (i + 1)..n {
            dists.push(sq_dist(u, &points[j * dim..(j + 1) * dim]).sqrt());
        }
    }
    let m = median_in_place(&mut dists);
    if m > 0.0 {
        return Ok(m);
    }
    dists.retain(|&d| d > 0.0);
    if dists.is_empty() {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(median_in_place(&mut dists))
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let m = v.len();
    let cmp = |a: &f64, b: &f64| a.total_cmp(b);
    let (_, &mut upper, _) = v.select_nth_unstable_by(m / 2, cmp);
    if m % 2 == 1 {
        upper
    } else {
        let lower = v[..m / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Dense Gram matrices for the score kernel `k` and the feature kernel `l`,
/// both row-major `n x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramPair {
    pub n: usize,
    pub k: Vec<f64>,
    pub l: Vec<f64>,
    pub score_kernel: Kernel,
    pub feature_kernel: Kernel,
}

impl GramPair {
    /// Elementwise product `K ∘ L`, the Gram matrix of the product kernel.
    pub fn product(&self) -> Vec<f64> {
        self.k.iter().zip(&self.l).map(|(a, b)| a * b).collect()
    }

    #[inline]
    pub fn k_at(&self, i: usize, j: usize) -> f64 {
        self.k[i * self.n + j]
    }

    #[inline]
    pub fn l_at(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }
}

/// Resolves both kernels on `d` (scores as 1-D points for `k`, feature
/// vectors for `l`).
pub fn resolve_kernels(
    d: &AuditDataset,
    k_spec: &KernelSpec,
    l_spec: &KernelSpec,
) -> Result<(Kernel, Kernel)> {
    let k = k_spec.resolve(d.scores(), 1)?;
    let l = l_spec.resolve(d.feature_matrix(), d.dim())?;
    Ok((k, l))
}

pub fn gram_pair(d: &AuditDataset, k_spec: &KernelSpec, l_spec: &KernelSpec) -> Result<GramPair> {
    let (k, l) = resolve_kernels(d, k_spec, l_spec)?;
    Ok(gram_pair_with(d, k, l))
}

/// Gram matrices for already-resolved kernels.
pub fn gram_pair_with(d: &AuditDataset, score_kernel: Kernel, feature_kernel: Kernel) -> GramPair {
    GramPair {
        n: d.len(),
        k: gram_matrix(d.scores(), 1, &score_kernel),
        l: gram_matrix(d.feature_matrix(), d.dim(), &feature_kernel),
        score_kernel,
        feature_kernel,
    }
}

/// Symmetric Gram matrix; the upper triangle is computed and mirrored.
pub fn gram_matrix(points: &[f64], dim: usize, kernel: &Kernel) -> Vec<f64> {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let upper_row = |i: usize| -> Vec<f64> {
        ((i + 1)..n)
            .map(|j| kernel.from_sq_dist(sq_dist(point(i), point(j))))
            .collect()
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(upper_row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<f64>> = (0..n).map(upper_row).collect();

    let mut g = vec![0.0; n * n];
    let diag = kernel.from_sq_dist(0.0);
    for (i, row) in rows.into_iter().enumerate() {
        g[i * n + i] = diag;
        for (off, v) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    g
}
