//! Hypothesis tests for local calibration of probabilistic binary
//! classifiers.
//!
//! A classifier is *locally calibrated* on an audit-feature space when
//! `P(y = 1 | x, fhat = a) = a` for every feature value `x` and score `a`.
//! The kernel local calibration error (KLCE) is zero exactly in that case.
//! This crate estimates KLCE² with an unbiased U-statistic, tests it against
//! a simulated null distribution, and localizes bias per record.
//!
//! ```
//! use klce::{gen_synthetic, run_test, SimConfig, SimModel, TestConfig};
//!
//! let sim = SimConfig { d: 2, n: 300, model: SimModel::DropLast, ..SimConfig::default() };
//! let data = gen_synthetic(&sim, 0).unwrap();
//! let result = run_test(&data, &TestConfig { n_bootstrap: 100, ..TestConfig::default() }).unwrap();
//! assert!(result.p_value <= 1.0);
//! ```

pub mod data;
pub mod error;
pub mod estimator;
pub mod hypothesis;
pub mod kernels;
pub mod lcb;
pub mod metrics;
pub mod recalibration;
pub mod rng;
pub mod simulation;

pub use data::{
    load_dataset, write_dataset, write_dataset_with, AuditDataset, AuditRecord, FeatureScaling,
    Schema,
};
pub use error::{Error, Result};
pub use estimator::{
    acceptance_threshold, hoeffding_tail, kce2, klce2_unbiased, KlceEstimate, ThresholdConfig,
};
pub use hypothesis::{
    bootstrap_null, consistency_null, p_value, resolve_with_fallback, run_test, NullMethod,
    TestConfig, TestResult,
};
pub use kernels::{
    gram_pair, kernel_eval, median_heuristic, Bandwidth, GramPair, Kernel, KernelFamily, KernelSpec,
};
pub use lcb::{
    group_trend, lcb_at, lcb_profile, lcb_records, GroupKey, GroupTrend, LcbEstimate, LcbKernels,
};
pub use metrics::{accuracy, brier, ece, mce, reliability, MetricsSummary, ReliabilityBins};
pub use recalibration::{fit_isotonic, fit_platt, fit_temperature, Recalibrator};
pub use simulation::{
    gen_synthetic, inference_estimate, type1_experiment, type2_experiment, SimConfig, SimModel,
    SimReport,
};
