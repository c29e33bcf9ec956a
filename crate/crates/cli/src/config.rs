use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use klce::{Bandwidth, KernelFamily, KernelSpec};
use serde::Deserialize;

use crate::args::KernelArgs;

/// Optional TOML configuration:
///
/// ```toml
/// [kernel.k]
/// family = "rbf"
/// bandwidth = "median"
///
/// [kernel.l]
/// family = "rbf"
/// bandwidth = 1.5
/// ```
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub kernel: KernelTables,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelTables {
    pub k: Option<KernelEntry>,
    pub l: Option<KernelEntry>,
}

#[derive(Debug, Default, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelEntry {
    pub family: Option<KernelFamily>,
    pub bandwidth: Option<Bandwidth>,
}

pub fn load(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn merge(
    file: Option<KernelEntry>,
    family: Option<KernelFamily>,
    bandwidth: Option<Bandwidth>,
) -> KernelSpec {
    let file = file.unwrap_or_default();
    KernelSpec {
        family: family.or(file.family).unwrap_or(KernelFamily::Rbf),
        bandwidth: bandwidth.or(file.bandwidth).unwrap_or_default(),
    }
}

/// Score and feature kernel specs: flags over config file over defaults
/// (RBF with the median heuristic).
pub fn kernel_specs(args: &KernelArgs) -> Result<(KernelSpec, KernelSpec)> {
    let file = match &args.config {
        Some(p) => load(p)?,
        None => FileConfig::default(),
    };
    let k = merge(file.kernel.k, args.k_kernel, args.k_bandwidth);
    let l = merge(file.kernel.l, args.l_kernel, args.l_bandwidth);
    k.validate().context("score kernel")?;
    l.validate().context("feature kernel")?;
    Ok((k, l))
}
