//! Global calibration metrics: Brier score, ECE, MCE, accuracy and
//! reliability-diagram bins.
//!
//! Bins are equal-width on `[0, 1]`; bin `b` covers `[b/B, (b+1)/B)` and the
//! top bin is closed on the right so that a score of exactly 1 lands in it.

use serde::{Deserialize, Serialize};

use crate::data::AuditDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `NaN` for empty bins.
    pub mean_score: f64,
    /// Empirical frequency of `y = 1`; `NaN` for empty bins.
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub n: usize,
    pub bins: Vec<ReliabilityBin>,
}

impl ReliabilityBins {
    fn gaps(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| (b.count, (b.mean_score - b.frequency).abs()))
    }

    pub fn ece(&self) -> f64 {
        self.gaps().map(|(c, g)| c as f64 / self.n as f64 * g).sum()
    }

    /// Largest gap over non-empty bins.
    pub fn mce(&self) -> f64 {
        self.gaps().map(|(_, g)| g).fold(0.0, f64::max)
    }
}

pub fn bin_index(score: f64, n_bins: usize) -> usize {
    ((score * n_bins as f64) as usize).min(n_bins - 1)
}

pub fn reliability(d: &AuditDataset, n_bins: usize) -> ReliabilityBins {
    let n_bins = n_bins.max(1);
    let mut count = vec![0usize; n_bins];
    let mut score_sum = vec![0.0; n_bins];
    let mut pos = vec![0.0; n_bins];
    for r in d.iter() {
        let b = bin_index(r.fhat, n_bins);
        count[b] += 1;
        score_sum[b] += r.fhat;
        pos[b] += f64::from(r.y);
    }
    let bins = (0..n_bins)
        .map(|b| {
            let c = count[b] as f64;
            ReliabilityBin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                count: count[b],
                mean_score: score_sum[b] / c,
                frequency: pos[b] / c,
            }
        })
        .collect();
    ReliabilityBins { n: d.len(), bins }
}

pub fn brier(d: &AuditDataset) -> f64 {
    d.iter()
        .map(|r| (r.fhat - f64::from(r.y)).powi(2))
        .sum::<f64>()
        / d.len() as f64
}

pub fn ece(d: &AuditDataset, n_bins: usize) -> f64 {
    reliability(d, n_bins).ece()
}

pub fn mce(d: &AuditDataset, n_bins: usize) -> f64 {
    reliability(d, n_bins).mce()
}

/// Fraction of records where `(fhat >= threshold)` matches the label.
pub fn accuracy(d: &AuditDataset, threshold: f64) -> f64 {
    let hits = d
        .iter()
        .filter(|r| (r.fhat >= threshold) == (r.y == 1))
        .count();
    hits as f64 / d.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub brier: f64,
    pub ece: f64,
    pub mce: f64,
    pub accuracy: f64,
    pub n_bins: usize,
}

pub fn summary(d: &AuditDataset, n_bins: usize) -> MetricsSummary {
    let bins = reliability(d, n_bins);
    MetricsSummary {
        brier: brier(d),
        ece: bins.ece(),
        mce: bins.mce(),
        accuracy: accuracy(d, 0.5),
        n_bins: bins.bins.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AuditRecord;

    fn ds(rows: &[(u8, f64)]) -> AuditDataset {
        let recs = rows
            .iter()
            .map(|&(y, p)| AuditRecord::new(vec![0.0], y, p))
            .collect();
        AuditDataset::new(vec!["x".into()], recs).unwrap()
    }

    fn hand_case() -> AuditDataset {
        ds(&[(0, 0.2), (1, 0.3), (1, 0.8), (1, 0.9)])
    }

    #[test]
    fn perfect_scores() {
        let d = ds(&[(1, 1.0), (0, 0.0), (1, 1.0)]);
        assert_eq!(brier(&d), 0.0);
        assert_eq!(ece(&d, 10), 0.0);
        assert_eq!(mce(&d, 10), 0.0);
        assert_eq!(accuracy(&d, 0.5), 1.0);
        let rel = reliability(&d, 10);
        assert_eq!(rel.bins[0].count, 1);
        assert_eq!(rel.bins[9].count, 2);
        assert_eq!(rel.bins[9].frequency, 1.0);
        assert_eq!(rel.bins[9].mean_score, 1.0);
        assert_eq!(rel.bins[5].count, 0);
    }

    #[test]
    fn brier_half() {
        assert_eq!(brier(&ds(&[(1, 0.5), (0, 0.5), (1, 0.5)])), 0.25);
    }

    #[test]
    fn one_bin_is_mean_gap() {
        let d = hand_case();
        assert!((ece(&d, 1) - (0.55f64 - 0.75).abs()).abs() < 1e-15);
        assert_eq!(mce(&d, 1), ece(&d, 1));
    }

    #[test]
    fn hand_binned_case() {
        let d = hand_case();
        assert!((ece(&d, 2) - 0.2).abs() < 1e-12);
        assert!((mce(&d, 2) - 0.25).abs() < 1e-12);
        let rel = reliability(&d, 2);
        assert_eq!(rel.bins[0].count, 2);
        assert!((rel.bins[0].mean_score - 0.25).abs() < 1e-15);
        assert_eq!(rel.bins[0].frequency, 0.5);
        assert_eq!(rel.bins[1].count, 2);
        assert!((rel.bins[1].mean_score - 0.85).abs() < 1e-15);
        assert_eq!(rel.bins[1].frequency, 1.0);
        assert_eq!(rel.bins[1].upper, 1.0);
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&ds(&[(1, 0.4), (1, 0.4)]), 0.5), 0.0);
        assert_eq!(accuracy(&ds(&[(1, 0.5), (0, 0.49)]), 0.5), 1.0);
    }
}
