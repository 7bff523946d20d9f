//! Frame-level accuracy: `ACC = ΣTP / (ΣTP + ΣFP + ΣFN)`, sums over time steps.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{EsnError, Result};
use crate::linalg::DenseMatrix;

/// Binary `T × dim` piano-roll matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl NoteMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(EsnError::Dimension("ragged note rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, on: bool) {
        self.data[r * self.cols + c] = on;
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [bool] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn count_on(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Active indices of row `r`, ascending.
    pub fn active(&self, r: usize) -> Vec<usize> {
        self.row(r)
            .iter()
            .enumerate()
            .filter_map(|(i, &on)| on.then_some(i))
            .collect()
    }

    /// `{0, 1}` as `f64`.
    pub fn to_f64(&self) -> DenseMatrix {
        let data = self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        DenseMatrix::from_row_major(self.rows, self.cols, data).expect("shape preserved")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Add for FrameCounts {
    type Output = FrameCounts;

    fn add(self, o: FrameCounts) -> FrameCounts {
        FrameCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for FrameCounts {
    fn add_assign(&mut self, o: FrameCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for FrameCounts {
    fn sum<I: Iterator<Item = FrameCounts>>(iter: I) -> FrameCounts {
        iter.fold(FrameCounts::default(), Add::add)
    }
}

impl FrameCounts {
    /// Counts for one frame.
    #[inline]
    pub fn of_row(pred: &[bool], target: &[bool]) -> FrameCounts {
        let mut c = FrameCounts::default();
        for (&p, &t) in pred.iter().zip(target) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        c
    }

    pub fn acc(&self) -> f64 {
        acc(self)
    }
}

/// TP/FP/FN totals over every time step.
pub fn frame_counts(pred: &NoteMatrix, target: &NoteMatrix) -> Result<FrameCounts> {
    if pred.shape() != target.shape() {
        return Err(EsnError::Dimension(format!(
            "prediction is {:?}, target is {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok((0..pred.rows())
        .map(|r| FrameCounts::of_row(pred.row(r), target.row(r)))
        .sum())
}

/// `tp / (tp + fp + fn)`, and 1.0 when nothing was predicted on a silent target.
pub fn acc(counts: &FrameCounts) -> f64 {
    let denom = counts.tp + counts.fp + counts.fn_;
    if denom == 0 {
        1.0
    } else {
        counts.tp as f64 / denom as f64
    }
}

/// How per-sequence counts combine into one split score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sum counts over every sequence, then divide once.
    #[default]
    Pooled,
    /// Mean of per-sequence ACC values.
    MacroAverage,
}

pub fn aggregate_acc(per_sequence: &[FrameCounts], how: Aggregation) -> f64 {
    match how {
        Aggregation::Pooled => acc(&per_sequence.iter().copied().sum()),
        Aggregation::MacroAverage => {
            if per_sequence.is_empty() {
                return 1.0;
            }
            per_sequence.iter().map(acc).sum::<f64>() / per_sequence.len() as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn notes(rows: &[&[u8]]) -> NoteMatrix {
        NoteMatrix::from_rows(&rows.iter().map(|r| r.iter().map(|&b| b == 1).collect()).collect::<Vec<_>>())
            .unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let t = notes(&[&[1, 0, 1], &[0, 1, 0]]);
        let c = frame_counts(&t, &t).unwrap();
        assert_eq!(c, FrameCounts { tp: 3, fp: 0, fn_: 0 });
        assert_eq!(acc(&c), 1.0);
    }

    #[test]
    fn silent_prediction() {
        let t = notes(&[&[1, 0, 1], &[0, 1, 0]]);
        let c = frame_counts(&NoteMatrix::zeros(2, 3), &t).unwrap();
        assert_eq!(c, FrameCounts { tp: 0, fp: 0, fn_: 3 });
        assert_eq!(acc(&c), 0.0);
    }

    #[test]
    fn single_frame_enumeration() {
        // pred {1,2}, target {2,3}
        let pred = notes(&[&[0, 1, 1, 0]]);
        let target = notes(&[&[0, 0, 1, 1]]);
        let c = frame_counts(&pred, &target).unwrap();
        assert_eq!(c, FrameCounts { tp: 1, fp: 1, fn_: 1 });
        assert_eq!(acc(&c), 1.0 / 3.0);
    }

    #[test]
    fn empty_denominator_convention() {
        assert_eq!(acc(&FrameCounts::default()), 1.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(frame_counts(&NoteMatrix::zeros(2, 3), &NoteMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn pooled_differs_from_macro() {
        let a = FrameCounts { tp: 1, fp: 0, fn_: 0 };
        let b = FrameCounts { tp: 0, fp: 3, fn_: 0 };
        assert_eq!(aggregate_acc(&[a, b], Aggregation::Pooled), 0.25);
        assert_eq!(aggregate_acc(&[a, b], Aggregation::MacroAverage), 0.5);
    }

    #[test]
    fn serializes_fn_field_name() {
        let s = serde_json::to_string(&FrameCounts { tp: 1, fp: 2, fn_: 3 }).unwrap();
        assert_eq!(s, r#"{"tp":1,"fp":2,"fn":3}"#);
    }
}
