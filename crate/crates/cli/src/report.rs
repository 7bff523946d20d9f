//! Report documents written by `run`, `grid` and `validate-data`.
//!
//! Field order is fixed by the struct definitions, so reports from the same
//! config and seed differ only in the wall-clock fields (`seconds`,
//! `elapsed_seconds`).

use deepesn::data::{benchmark_dim, PianoRollDataset};
use deepesn::pipeline::PreparedDataset;
use deepesn::selection::{count_free_parameters, Architecture, GridSpec, SearchOptions, SearchOutcome, TrialReport};
use deepesn::Result;
use serde::{Deserialize, Serialize};

use crate::config::{Command, Preset};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Keys holding wall-clock measurements.
pub const TIMING_KEYS: [&str; 2] = ["seconds", "elapsed_seconds"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub dim: usize,
    pub sequences: SplitCounts,
    /// Next-step pairs per split.
    pub steps: SplitCounts,
}

impl DatasetSummary {
    pub fn of(ds: &PianoRollDataset, prepared: &PreparedDataset) -> Self {
        Self {
            name: ds.name.clone(),
            dim: ds.dim,
            sequences: SplitCounts {
                train: ds.splits.train.len(),
                valid: ds.splits.valid.len(),
                test: ds.splits.test.len(),
            },
            steps: SplitCounts {
                train: prepared.train.steps(),
                valid: prepared.valid.steps(),
                test: prepared.test.steps(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSummary {
    #[serde(flatten)]
    pub architecture: Architecture,
    pub total_units: usize,
    pub free_parameters: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub command: Command,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    pub dataset: DatasetSummary,
    pub architecture: ArchitectureSummary,
    pub options: SearchOptions,
    pub grid: GridSpec,
    pub grid_size: usize,
    pub selected: TrialReport,
    pub trials: Vec<TrialReport>,
    /// Wall-clock seconds for the whole search, data loading excluded.
    pub elapsed_seconds: f64,
}

impl ExperimentReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        command: Command,
        dataset: DatasetSummary,
        architecture: Architecture,
        preset: Option<Preset>,
        options: SearchOptions,
        grid: GridSpec,
        outcome: SearchOutcome,
        elapsed_seconds: f64,
    ) -> Self {
        let free_parameters = count_free_parameters(
            dataset.dim as u64,
            architecture.n_layers as u64,
            architecture.units_per_layer as u64,
        );
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            command,
            preset,
            architecture: ArchitectureSummary {
                architecture,
                total_units: architecture.total_units(),
                free_parameters,
            },
            dataset,
            options,
            grid_size: grid.len(),
            grid,
            selected: outcome.best().clone(),
            trials: outcome.trials,
            elapsed_seconds,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Removes every timing key from a report value, recursively.
pub fn strip_timing(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            for k in TIMING_KEYS {
                map.remove(k);
            }
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub sequences: usize,
    pub frames: usize,
    pub min_length: usize,
    pub max_length: usize,
    pub active_notes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub name: String,
    pub dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub benchmark_dim: Option<usize>,
    pub train: SplitStats,
    pub valid: SplitStats,
    pub test: SplitStats,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn new(ds: &PianoRollDataset, warnings: Vec<String>) -> Self {
        let stats = |seqs: &[deepesn::data::PianoRollSequence]| SplitStats {
            sequences: seqs.len(),
            frames: seqs.iter().map(|s| s.len()).sum(),
            min_length: seqs.iter().map(|s| s.len()).min().unwrap_or(0),
            max_length: seqs.iter().map(|s| s.len()).max().unwrap_or(0),
            active_notes: seqs.iter().flat_map(|s| &s.frames).map(Vec::len).sum(),
        };
        Self {
            name: ds.name.clone(),
            dim: ds.dim,
            benchmark_dim: benchmark_dim(&ds.name),
            train: stats(&ds.splits.train),
            valid: stats(&ds.splits.valid),
            test: stats(&ds.splits.test),
            warnings,
        }
    }
}
