use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use klce::{Bandwidth, KernelFamily, NullMethod, SimModel};

#[derive(Debug, Parser)]
#[command(
    name = "klce",
    version,
    about = "Audit local calibration of binary classifiers"
)]
pub struct Cli {
    /// Maximum worker threads (results do not depend on this value).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test local calibration; exit 0 if retained, 2 if rejected.
    Audit(AuditArgs),
    /// Per-record local calibration bias.
    Diagnose(DiagnoseArgs),
    /// Brier score, ECE, MCE and accuracy.
    Metrics(MetricsArgs),
    /// Fit a recalibrator on one file and apply it to another.
    Recalibrate(RecalibrateArgs),
    /// Type-I / Type-II experiments on synthetic data.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV (`-` for stdin).
    #[arg(long, short)]
    pub input: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SchemaArgs {
    #[arg(long, default_value = "y")]
    pub label: String,
    #[arg(long, default_value = "p")]
    pub score: String,
    /// Comma-separated feature columns; default is every other column.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    /// Standardize each feature column before building kernels.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct KernelArgs {
    /// TOML file with `kernel.k` / `kernel.l` tables (flags take precedence).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Score kernel family: rbf or constant.
    #[arg(long)]
    pub k_kernel: Option<KernelFamily>,
    /// Score kernel bandwidth: a number, `median` or `median:<scale>`.
    #[arg(long)]
    pub k_bandwidth: Option<Bandwidth>,
    #[arg(long)]
    pub l_kernel: Option<KernelFamily>,
    #[arg(long)]
    pub l_bandwidth: Option<Bandwidth>,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    /// Null replicates.
    #[arg(long, default_value_t = 500)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Null generator: consistency or residual.
    #[arg(long, default_value = "consistency")]
    pub null: NullMethod,
    /// Bound B used by the analytic threshold.
    #[arg(long, default_value_t = 1.0)]
    pub bound: f64,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub kernels: KernelArgs,
    #[command(flatten)]
    pub test: TestArgs,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Report path (`-` for stdout).
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub kernels: KernelArgs,
    /// Query points (feature columns and the score column); default is the
    /// input records.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Write per-group polynomial fits of bias as JSON to this path.
    #[arg(long)]
    pub trend: Option<PathBuf>,
    /// Feature on the horizontal axis of the trend fit.
    #[arg(long, requires = "trend")]
    pub axis: Option<String>,
    /// Group records by the values of this feature.
    #[arg(long, requires = "trend")]
    pub group_by: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Write the reliability diagram table as CSV to this path.
    #[arg(long)]
    pub reliability: Option<PathBuf>,
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Platt,
    Temperature,
    Isotonic,
}

#[derive(Debug, Args)]
pub struct RecalibrateArgs {
    /// File the recalibrator is fitted on.
    #[arg(long, required_unless_present = "load")]
    pub calib: Option<PathBuf>,
    /// File the recalibrator is applied to.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum, default_value = "isotonic")]
    pub method: Method,
    #[command(flatten)]
    pub schema: SchemaArgs,
    /// Apply a saved recalibrator instead of fitting one.
    #[arg(long, conflicts_with = "calib")]
    pub load: Option<PathBuf>,
    /// Save the fitted recalibrator as JSON.
    #[arg(long)]
    pub save: Option<PathBuf>,
    /// Recalibrated test CSV (`-` for stdout).
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
    /// Audit the test file before and after, writing a JSON report here.
    #[arg(long)]
    pub then_audit: Option<PathBuf>,
    #[command(flatten)]
    pub kernels: KernelArgs,
    #[command(flatten)]
    pub test_args: TestArgs,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimMode {
    Type1,
    Type2,
    /// Write one synthetic dataset instead of running experiments.
    Sample,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub mode: SimMode,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub d_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "500")]
    pub n_grid: Vec<usize>,
    /// Bandwidth multipliers for type1 (applied to both kernels).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub bandwidth_scales: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 500)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "consistency")]
    pub null: NullMethod,
    /// Score model for `--mode sample`: bayes or drop-last.
    #[arg(long, value_enum, default_value = "drop-last")]
    pub model: ModelArg,
    /// Replicate index for `--mode sample`.
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
    #[command(flatten)]
    pub kernels: KernelArgs,
    #[arg(long, short, default_value = "-")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Bayes,
    DropLast,
}

impl From<ModelArg> for SimModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Bayes => SimModel::Bayes,
            ModelArg::DropLast => SimModel::DropLast,
        }
    }
}
