//! Train/evaluate plumbing shared by the grid search, the CLI and the demo:
//! next-step pairs, IP pre-training, state collection, ridge solves, and
//! thresholded frame counts.

use crate::data::{next_step_pairs, PianoRollDataset, PianoRollSequence};
use crate::error::{EsnError, Result};
use crate::ip::{pretrain_ip, IpConfig, IpReport};
use crate::linalg::DenseMatrix;
use crate::metrics::{FrameCounts, NoteMatrix};
use crate::readout::{RidgeAccumulator, RidgeReadout};
use crate::reservoir::{run_sequence, DeepReservoir};

/// One split as next-step `(input, target)` pairs, one entry per sequence of
/// length ≥ 2.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSplit {
    pub inputs: Vec<DenseMatrix>,
    pub targets: Vec<NoteMatrix>,
}

impl PreparedSplit {
    pub fn from_sequences(seqs: &[PianoRollSequence], dim: usize) -> Self {
        let (inputs, targets) = seqs
            .iter()
            .filter_map(|s| next_step_pairs(s, dim))
            .map(|(x, y)| (x.to_f64(), y))
            .unzip();
        Self { inputs, targets }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.inputs.iter().map(DenseMatrix::rows).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub dim: usize,
    pub train: PreparedSplit,
    pub valid: PreparedSplit,
    pub test: PreparedSplit,
}

impl PreparedDataset {
    pub fn new(ds: &PianoRollDataset) -> Result<Self> {
        let prepared = Self {
            dim: ds.dim,
            train: PreparedSplit::from_sequences(&ds.splits.train, ds.dim),
            valid: PreparedSplit::from_sequences(&ds.splits.valid, ds.dim),
            test: PreparedSplit::from_sequences(&ds.splits.test, ds.dim),
        };
        for (name, split) in [
            ("train", &prepared.train),
            ("valid", &prepared.valid),
            ("test", &prepared.test),
        ] {
            if split.is_empty() {
                return Err(EsnError::Data(format!(
                    "split '{name}' has no sequence with at least two frames"
                )));
            }
        }
        Ok(prepared)
    }
}

/// IP pre-training on the training inputs.
pub fn adapt(model: &mut DeepReservoir, train: &PreparedSplit, ip: &IpConfig) -> Result<IpReport> {
    pretrain_ip(model, &train.inputs, ip)
}

/// Normal equations over the training split. Sequences no longer than
/// `washout` contribute nothing.
pub fn collect_training(model: &DeepReservoir, train: &PreparedSplit, washout: usize) -> Result<RidgeAccumulator> {
    let mut acc = RidgeAccumulator::new(model.state_dim(), train.targets.first().map_or(0, NoteMatrix::cols));
    for (x, y) in train.inputs.iter().zip(&train.targets) {
        if x.rows() <= washout {
            continue;
        }
        let states = run_sequence(model, x, washout)?;
        let targets = y.slice_rows(washout, y.rows()).to_f64();
        acc.accumulate(&states, &targets)?;
    }
    if acc.count() == 0 {
        return Err(EsnError::Contract(format!(
            "washout {washout} leaves no training steps"
        )));
    }
    Ok(acc)
}

/// Frame counts for every (readout, threshold, sequence) combination:
/// `counts[r][k][s]`. Reservoir states are computed once per sequence.
pub fn evaluate_counts(
    model: &DeepReservoir,
    readouts: &[RidgeReadout],
    split: &PreparedSplit,
    thresholds: &[f64],
    washout: usize,
) -> Result<Vec<Vec<Vec<FrameCounts>>>> {
    let mut counts = vec![vec![Vec::with_capacity(split.len()); thresholds.len()]; readouts.len()];
    let width = readouts.first().map_or(0, RidgeReadout::output_dim);
    let mut out = vec![0.0; width];
    let mut pred = vec![false; width];
    for (x, y) in split.inputs.iter().zip(&split.targets) {
        if x.rows() <= washout {
            continue;
        }
        let states = run_sequence(model, x, washout)?;
        for (r, readout) in readouts.iter().enumerate() {
            let mut per_threshold = vec![FrameCounts::default(); thresholds.len()];
            for (t, row) in states.row_iter().enumerate() {
                readout.predict_row(row, &mut out);
                let target = y.row(t + washout);
                for (k, &th) in thresholds.iter().enumerate() {
                    for (p, &o) in pred.iter_mut().zip(&out) {
                        *p = o >= th;
                    }
                    per_threshold[k] += FrameCounts::of_row(&pred, target);
                }
            }
            for (k, c) in per_threshold.into_iter().enumerate() {
                counts[r][k].push(c);
            }
        }
    }
    Ok(counts)
}

/// Real-valued readout outputs for every step of one sequence.
pub fn predict_sequence(model: &DeepReservoir, readout: &RidgeReadout, inputs: &DenseMatrix) -> Result<DenseMatrix> {
    let states = run_sequence(model, inputs, 0)?;
    readout.predict(&states)
}
