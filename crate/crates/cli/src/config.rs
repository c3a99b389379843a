//! Run configuration: one JSON file drives every subcommand, with a few
//! command-line overrides layered on top. Relative paths are resolved
//! against the config file's directory.

use countsurge::mcmc::{HyperParams, McmcConfig};
use countsurge::simulate::SimSpec;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub rescale: Option<RescaleConfig>,
    pub hyper: HyperParams,
    pub mcmc: McmcConfig,
    pub sim: Option<SimSpec>,
    pub report: ReportConfig,
    pub regress: RegressConfig,
    /// Write a checkpoint every this many sweeps (0 disables).
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DataConfig {
    /// Counts CSV with columns date, y_1..y_J, z.
    pub counts: Option<PathBuf>,
    /// Optional per-series covariate CSVs, one entry per series (null for
    /// none).
    pub covariates: Vec<Option<PathBuf>>,
    /// Optional global covariate CSV.
    pub covariates_global: Option<PathBuf>,
}

/// Ingestion-time rescaling of counts; factors are recorded in outputs so
/// reports can restore the original scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RescaleConfig {
    pub series: Vec<f64>,
    pub global: f64,
}

impl RescaleConfig {
    /// Conventional defaults: 0.1 for country series, 0.001 for the global
    /// series.
    pub fn conventional(n_series: usize) -> Self {
        Self {
            series: vec![0.1; n_series],
            global: 0.001,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    /// Posterior-probability threshold flagging a day as amplified.
    pub threshold: f64,
    /// Quantile levels in the paths report.
    pub quantiles: Vec<f64>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            quantiles: vec![0.05, 0.5, 0.95],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RegressConfig {
    /// Target series CSV with columns date, value.
    pub target: Option<PathBuf>,
    /// Regress on per-draw features instead of posterior means.
    pub per_draw: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&raw)
            .map_err(|e| anyhow::anyhow!("malformed config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        if let Some(p) = self.data.counts.as_mut() {
            fix(p);
        }
        for c in self.data.covariates.iter_mut().flatten() {
            fix(c);
        }
        if let Some(p) = self.data.covariates_global.as_mut() {
            fix(p);
        }
        if let Some(p) = self.regress.target.as_mut() {
            fix(p);
        }
    }
}
