//! Library side of the `deepesn` command: config parsing, command execution
//! and report assembly, kept out of `main.rs` so tests can drive it directly.

pub mod config;
pub mod report;

use std::path::Path;
use std::time::Instant;

use deepesn::data::{benchmark_dim, load_dataset, PianoRollDataset};
use deepesn::pipeline::PreparedDataset;
use deepesn::selection::grid_search;
use deepesn::{EsnError, Result};

use crate::config::{Command, ExperimentConfig};
use crate::report::{DatasetSummary, ExperimentReport, ValidationReport};

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<std::path::PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
    }
}

/// Runs `run` or `grid`. Dataset loading is outside the timed region.
pub fn execute(cfg: &ExperimentConfig, command: Command) -> Result<ExperimentReport> {
    cfg.validate(command)?;
    let dataset = load_dataset(&cfg.dataset)?;
    dataset.require_splits()?;
    let prepared = PreparedDataset::new(&dataset)?;
    let arch = cfg.architecture()?;
    let grid = match command {
        Command::Run => cfg.run_grid()?,
        Command::Grid => cfg.grid(),
    };
    let opts = cfg.search_options();

    let started = Instant::now();
    let outcome = grid_search(&prepared, &arch, &grid, &opts)?;
    let elapsed = started.elapsed().as_secs_f64();

    Ok(ExperimentReport::new(
        command,
        DatasetSummary::of(&dataset, &prepared),
        arch,
        cfg.preset,
        opts,
        grid,
        outcome,
        elapsed,
    ))
}

/// Executes and writes the report to `cfg.output` when set. Returns the JSON text.
pub fn execute_to_file(cfg: &ExperimentConfig, command: Command) -> Result<String> {
    let report = execute(cfg, command)?;
    let text = report.to_json()?;
    if let Some(path) = &cfg.output {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, &text)?;
    }
    Ok(text)
}

/// Schema and dimensionality diagnostics for a dataset file.
pub fn validate_data(path: &Path) -> Result<ValidationReport> {
    let dataset: PianoRollDataset = load_dataset(path)?;
    let mut warnings = Vec::new();
    for (split, seqs) in dataset.splits.iter() {
        if seqs.is_empty() {
            warnings.push(format!("split '{split}' is empty"));
        }
        let short = seqs.iter().filter(|s| s.len() < 2).count();
        if short > 0 {
            warnings.push(format!("split '{split}' has {short} sequence(s) shorter than 2 frames"));
        }
    }
    if benchmark_dim(&dataset.name).is_none() {
        warnings.push(format!(
            "'{}' is not one of the four benchmark names; dimensionality not pinned",
            dataset.name
        ));
    }
    Ok(ValidationReport::new(&dataset, warnings))
}

/// Machine-readable error record.
pub fn error_record(err: &EsnError) -> serde_json::Value {
    serde_json::json!({
        "error": {
            "kind": err.kind(),
            "message": err.to_string(),
        }
    })
}
