//! Experiment configuration files.
//!
//! A config is one JSON object. Every field is optional except `dataset`;
//! `preset` fills architecture and grid defaults and explicit fields win.
//! Relative paths resolve against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use deepesn::ip::IpConfig;
use deepesn::metrics::Aggregation;
use deepesn::selection::{Architecture, GridSpec, Hyperparameters, SearchOptions, ThresholdPolicy};
use deepesn::{EsnError, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// 30 layers × 200 units, full grid, 5 guesses, IP on.
    #[serde(rename = "deepesn-paper")]
    DeepEsnPaper,
    /// One 6000-unit reservoir, full grid, 5 guesses, IP on.
    #[serde(rename = "esn-paper")]
    EsnPaper,
}

impl Preset {
    pub fn architecture(self) -> Architecture {
        match self {
            Preset::DeepEsnPaper => Architecture::deep_paper(),
            Preset::EsnPaper => Architecture::shallow_paper(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IpSettings {
    pub enabled: bool,
    #[serde(flatten)]
    pub config: IpConfig,
}

impl Default for IpSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            config: IpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub schema_version: Option<u32>,
    #[serde(default)]
    pub preset: Option<Preset>,
    pub dataset: PathBuf,
    #[serde(default)]
    pub architecture: Option<Architecture>,
    /// Fixed point for `run`.
    #[serde(default)]
    pub hyperparameters: Option<Hyperparameters>,
    /// Search space for `grid`.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Guesses for `run`.
    #[serde(default = "default_guesses")]
    pub guesses: usize,
    #[serde(default)]
    pub ip: IpSettings,
    #[serde(default)]
    pub washout: usize,
    #[serde(default)]
    pub threshold: ThresholdPolicy,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_guesses() -> usize {
    5
}

fn default_workers() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        if let Some(v) = cfg.schema_version {
            if v != CONFIG_SCHEMA_VERSION {
                return Err(EsnError::Config(format!(
                    "config schema_version {v} is not supported (expected {CONFIG_SCHEMA_VERSION})"
                )));
            }
        }
        Ok(cfg)
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| EsnError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| EsnError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if cfg.dataset.is_relative() {
            cfg.dataset = base.join(&cfg.dataset);
        }
        if let Some(out) = &cfg.output {
            if out.is_relative() {
                cfg.output = Some(base.join(out));
            }
        }
        Ok(cfg)
    }

    pub fn architecture(&self) -> Result<Architecture> {
        self.architecture
            .or_else(|| self.preset.map(Preset::architecture))
            .ok_or_else(|| EsnError::Config("config needs either `architecture` or `preset`".into()))
    }

    pub fn grid(&self) -> GridSpec {
        self.grid.clone().unwrap_or_default()
    }

    /// Single-point grid for `run`.
    pub fn run_grid(&self) -> Result<GridSpec> {
        let h = self
            .hyperparameters
            .ok_or_else(|| EsnError::Config("`run` needs `hyperparameters`".into()))?;
        Ok(GridSpec::single(h, self.guesses))
    }

    pub fn search_options(&self) -> SearchOptions {
        SearchOptions {
            ip: self.ip.enabled.then_some(self.ip.config),
            washout: self.washout,
            threshold: self.threshold,
            aggregation: self.aggregation,
            master_seed: self.seed,
            workers: self.workers,
        }
    }

    /// Checks everything that can be checked without touching the dataset contents.
    pub fn validate(&self, command: Command) -> Result<()> {
        let arch = self.architecture()?;
        if arch.n_layers == 0 || arch.units_per_layer == 0 {
            return Err(EsnError::Config("architecture needs positive layer and unit counts".into()));
        }
        if !(arch.connectivity > 0.0 && arch.connectivity <= 1.0) {
            return Err(EsnError::Config(format!("connectivity {} outside (0, 1]", arch.connectivity)));
        }
        match command {
            Command::Run => {
                self.run_grid()?.validate()?;
            }
            Command::Grid => self.grid().validate()?,
        }
        if self.ip.enabled {
            self.ip.config.validate()?;
        }
        if self.workers == 0 {
            return Err(EsnError::Config("workers must be at least 1".into()));
        }
        if !self.dataset.is_file() {
            return Err(EsnError::Config(format!(
                "dataset {} does not exist",
                self.dataset.display()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Run,
    Grid,
}
