//! Versioned JSON configuration files.

use std::path::{Path, PathBuf};

use elwqr_core::elweights::WorkingBasis;
use elwqr_core::estimators::ElwOptions;
use elwqr_core::simgen::SimDesign;
use elwqr_core::{Estimator, QuantileLevel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::io::ColumnSpec;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BOOTSTRAP_B: usize = 200;
/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ELWQR_OUT_DIR";

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Cca, Estimator::Elw]
}

fn all_estimators() -> Vec<Estimator> {
    Estimator::ALL.to_vec()
}

fn default_b() -> usize {
    DEFAULT_BOOTSTRAP_B
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tau_grid: Vec<QuantileLevel>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_b")]
    pub bootstrap_b: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub basis: WorkingBasis,
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.tau_grid.is_empty() {
            return Err(CliError::validation("tau_grid is empty"));
        }
        if self.tau_grid.windows(2).any(|w| w[0].value() >= w[1].value()) {
            return Err(CliError::validation("tau_grid must be strictly increasing"));
        }
        validate_estimators(&self.estimators)?;
        if self.bootstrap_b < 2 {
            return Err(CliError::validation("bootstrap_b must be at least 2"));
        }
        Ok(())
    }

    pub fn elw_options(&self) -> ElwOptions {
        ElwOptions { basis: self.basis }
    }
}

fn validate_estimators(estimators: &[Estimator]) -> CliResult<()> {
    if estimators.is_empty() {
        return Err(CliError::validation("no estimators requested"));
    }
    let mut sorted = estimators.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != estimators.len() {
        return Err(CliError::validation("estimators contain duplicates"));
    }
    Ok(())
}

/// Configuration of `analyze`: a data file, its columns and the run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub schema_version: u32,
    /// Relative paths are resolved against the config file's directory.
    pub data: PathBuf,
    pub columns: ColumnSpec,
    pub run: RunConfig,
}

/// Configuration of `fit`, `bootstrap` and `check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub schema_version: u32,
    pub columns: ColumnSpec,
    #[serde(default)]
    pub basis: WorkingBasis,
}

/// Configuration of `simulate`: one table row per `(tau, n, estimator)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub design: SimDesign,
    pub taus: Vec<QuantileLevel>,
    pub ns: Vec<usize>,
    pub reps: usize,
    #[serde(default = "all_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub basis: WorkingBasis,
}

impl SimulateConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.taus.is_empty() || self.ns.is_empty() {
            return Err(CliError::validation("taus and ns must be nonempty"));
        }
        if self.reps < 2 {
            return Err(CliError::validation("reps must be at least 2"));
        }
        validate_estimators(&self.estimators)?;
        self.design.validate()?;
        Ok(())
    }
}

trait Versioned {
    fn schema_version(&self) -> u32;
}

macro_rules! versioned {
    ($($t:ty),*) => {$(
        impl Versioned for $t {
            fn schema_version(&self) -> u32 {
                self.schema_version
            }
        }
    )*};
}
versioned!(AnalysisConfig, DataConfig, SimulateConfig);

#[allow(private_bounds)]
pub fn read_config<T: DeserializeOwned + Versioned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
    let cfg: T = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("invalid config {}: {e}", path.display())))?;
    if cfg.schema_version() != SCHEMA_VERSION {
        return Err(CliError::validation(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            cfg.schema_version()
        )));
    }
    Ok(cfg)
}

/// Seed, version and configuration digest recorded in every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
}

impl Provenance {
    pub fn new(seed: u64, config: &impl Serialize) -> Self {
        let bytes = serde_json::to_vec(config).expect("configs serialize");
        Provenance {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256: hex::encode(Sha256::digest(&bytes)),
        }
    }

    pub fn comment(&self) -> String {
        format!(
            "{} {} seed={} config_sha256={}",
            self.tool, self.version, self.seed, self.config_sha256
        )
    }
}
