//! Independent reference implementations used as test oracles. Nothing here
//! calls the matrix code paths of the library.
#![allow(dead_code)]

use klce::rng::{stream_rng, NormalSampler};
use klce::{AuditDataset, AuditRecord, Kernel};
use rand::Rng;

pub fn rbf(sigma: f64, u: &[f64], v: &[f64]) -> f64 {
    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

pub fn kernel(k: &Kernel, u: &[f64], v: &[f64]) -> f64 {
    match k.family {
        klce::KernelFamily::Rbf => rbf(k.sigma, u, v),
        klce::KernelFamily::Constant => 1.0,
    }
}

/// Literal double loop over ordered pairs `i != j`.
pub fn naive_klce2(d: &AuditDataset, k: &Kernel, l: &Kernel) -> f64 {
    let n = d.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (a, b) = (d.record(i), d.record(j));
            let ei = f64::from(a.y) - a.fhat;
            let ej = f64::from(b.y) - b.fhat;
            s += ei * kernel(k, &[a.fhat], &[b.fhat]) * kernel(l, a.x, b.x) * ej;
        }
    }
    s / (n * (n - 1)) as f64
}

pub fn naive_lcb(d: &AuditDataset, k: &Kernel, l: &Kernel, x: &[f64], f: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for r in d.iter() {
        let w = kernel(k, &[r.fhat], &[f]) * kernel(l, r.x, x);
        num += (f64::from(r.y) - r.fhat) * w;
        den += w;
    }
    num / den
}

/// Random dataset with uniform features in `[-2, 2]^dim` and scores in `(0, 1)`.
pub fn random_dataset(seed: u64, n: usize, dim: usize) -> AuditDataset {
    let mut rng = stream_rng(seed, 1000, 0);
    let recs = (0..n)
        .map(|_| {
            let x = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p: f64 = rng.gen_range(0.01..0.99);
            let y = u8::from(rng.gen::<f64>() < p);
            AuditRecord::new(x, y, p)
        })
        .collect();
    let names = (0..dim).map(|i| format!("f{i}")).collect();
    AuditDataset::new(names, recs).unwrap()
}

pub fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// Monte Carlo value of the population KLCE² for the drop-last generator in
/// `d = 2`: `E[delta(x) k(f, f') l(x, x') delta(x')]` over independent
/// pairs, with `delta(x) = sigmoid(x1 + x2) - sigmoid(x1)`.
/// Returns `(mean, standard error)`.
pub fn population_klce2_drop_last(
    sigma_k: f64,
    sigma_l: f64,
    pairs: usize,
    seed: u64,
) -> (f64, f64) {
    let mut s = NormalSampler::new(stream_rng(seed, 2000, 0));
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..pairs {
        let x = [s.sample(), s.sample()];
        let xp = [s.sample(), s.sample()];
        let (f, fp) = (sigmoid(x[0]), sigmoid(xp[0]));
        let delta = sigmoid(x[0] + x[1]) - f;
        let deltap = sigmoid(xp[0] + xp[1]) - fp;
        let v = delta * rbf(sigma_k, &[f], &[fp]) * rbf(sigma_l, &x, &xp) * deltap;
        sum += v;
        sum_sq += v * v;
    }
    let n = pairs as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Exhaustive isotonic least squares: the optimal fit takes values among
/// contiguous-segment means, so a DP over (position, candidate value)
/// enumerates every admissible nondecreasing assignment.
pub fn isotonic_dp(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut cands = Vec::new();
    for a in 0..n {
        let mut s = 0.0;
        for (len, v) in y[a..].iter().enumerate() {
            s += v;
            cands.push(s / (len + 1) as f64);
        }
    }
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let m = cands.len();
    // cost[i][v]: best cost of y[..=i] with fit[i] = cands[v]
    let mut cost = vec![vec![f64::INFINITY; m]; n];
    let mut arg = vec![vec![0usize; m]; n];
    for v in 0..m {
        cost[0][v] = (y[0] - cands[v]).powi(2);
    }
    for i in 1..n {
        let mut best = f64::INFINITY;
        let mut best_at = 0;
        for v in 0..m {
            if cost[i - 1][v] < best {
                best = cost[i - 1][v];
                best_at = v;
            }
            cost[i][v] = best + (y[i] - cands[v]).powi(2);
            arg[i][v] = best_at;
        }
    }
    let mut v = (0..m)
        .min_by(|&a, &b| cost[n - 1][a].total_cmp(&cost[n - 1][b]))
        .unwrap();
    let mut fit = vec![0.0; n];
    for i in (0..n).rev() {
        fit[i] = cands[v];
        if i > 0 {
            v = arg[i][v];
        }
    }
    fit
}

pub fn sq_error(y: &[f64], fit: &[f64]) -> f64 {
    y.iter().zip(fit).map(|(a, b)| (a - b).powi(2)).sum()
}
