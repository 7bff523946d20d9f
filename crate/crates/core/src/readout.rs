//! Linear readout over the concatenated reservoir state, trained in closed
//! form by ridge regression on streamed normal equations.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{EsnError, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::metrics::NoteMatrix;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Running `Σ x̃ x̃ᵀ` and `Σ x̃ yᵀ` with `x̃ = [x, 1]` (or `x̃ = x` without bias).
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeAccumulator {
    xtx: DMatrix<f64>,
    xty: DMatrix<f64>,
    count: usize,
    bias: bool,
}

impl RidgeAccumulator {
    /// Accumulator with the constant bias feature appended.
    pub fn new(state_dim: usize, output_dim: usize) -> Self {
        Self::with_bias(state_dim, output_dim, true)
    }

    pub fn with_bias(state_dim: usize, output_dim: usize, bias: bool) -> Self {
        let f = state_dim + usize::from(bias);
        Self {
            xtx: DMatrix::zeros(f, f),
            xty: DMatrix::zeros(f, output_dim),
            count: 0,
            bias,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.xtx.nrows() - usize::from(self.bias)
    }

    pub fn has_bias(&self) -> bool {
        self.bias
    }

    pub fn output_dim(&self) -> usize {
        self.xty.ncols()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn xtx(&self) -> &DMatrix<f64> {
        &self.xtx
    }

    pub fn xty(&self) -> &DMatrix<f64> {
        &self.xty
    }

    /// Adds one batch of rows. `states` is `T × D`, `targets` is `T × N_Y`.
    pub fn accumulate(&mut self, states: &DenseMatrix, targets: &DenseMatrix) -> Result<()> {
        let t = states.rows();
        if targets.rows() != t {
            return Err(EsnError::Dimension(format!(
                "{t} state rows but {} target rows",
                targets.rows()
            )));
        }
        if t == 0 {
            return Ok(());
        }
        let d = self.state_dim();
        if states.cols() != d || targets.cols() != self.output_dim() {
            return Err(EsnError::Dimension(format!(
                "batch is {}→{}, accumulator is {d}→{}",
                states.cols(),
                targets.cols(),
                self.output_dim()
            )));
        }
        // Row-major T×F data read column-major is F×T, i.e. X̃ᵀ.
        let f = self.xtx.nrows();
        let mut aug = Vec::with_capacity(t * f);
        for row in states.row_iter() {
            aug.extend_from_slice(row);
            if self.bias {
                aug.push(1.0);
            }
        }
        let xt = DMatrix::from_vec(f, t, aug);
        let y = DMatrix::from_row_slice(t, targets.cols(), targets.as_slice());
        let x = xt.transpose();
        self.xtx.gemm(1.0, &xt, &x, 1.0);
        self.xty.gemm(1.0, &xt, &y, 1.0);
        self.count += t;
        Ok(())
    }

    /// Sums two accumulators built over disjoint data.
    pub fn merge(&mut self, other: &RidgeAccumulator) -> Result<()> {
        if self.bias != other.bias || self.xtx.shape() != other.xtx.shape() || self.xty.shape() != other.xty.shape() {
            return Err(EsnError::Dimension("cannot merge accumulators of different shapes".into()));
        }
        self.xtx += &other.xtx;
        self.xty += &other.xty;
        self.count += other.count;
        Ok(())
    }

    /// `W_out = ((X̃ᵀX̃ + λI)⁻¹ X̃ᵀY)ᵀ` by Cholesky. The bias entry is
    /// regularized along with the state weights.
    pub fn solve(&self, lambda: f64) -> Result<RidgeReadout> {
        if self.count == 0 {
            return Err(EsnError::Contract("ridge solve on an empty accumulator".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(EsnError::Config(format!("ridge coefficient {lambda} must be non-negative")));
        }
        let mut a = self.xtx.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += lambda;
        }
        let chol = Cholesky::new(a).ok_or_else(|| {
            EsnError::Numerical(format!(
                "normal equations are not positive definite at λ_r = {lambda}; use a positive ridge coefficient"
            ))
        })?;
        let w = chol.solve(&self.xty);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(EsnError::Numerical("ridge solution is not finite".into()));
        }
        Ok(RidgeReadout {
            weights: DenseMatrix::from_nalgebra(&w.transpose()),
            bias: self.bias,
            threshold: DEFAULT_THRESHOLD,
        })
    }
}

/// `N_Y × (D+1)` output weights; with `bias` set the last column is the output bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeReadout {
    pub weights: DenseMatrix,
    pub bias: bool,
    pub threshold: f64,
}

impl RidgeReadout {
    pub fn state_dim(&self) -> usize {
        self.weights.cols() - usize::from(self.bias)
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    /// Affine map of one state row into `out`.
    pub fn predict_row(&self, state: &[f64], out: &mut [f64]) {
        let d = self.state_dim();
        assert_eq!(state.len(), d, "readout state width");
        for (o, w) in out.iter_mut().zip(self.weights.row_iter()) {
            *o = dot(&w[..d], state);
            if self.bias {
                *o += w[d];
            }
        }
    }

    pub fn predict(&self, states: &DenseMatrix) -> Result<DenseMatrix> {
        if states.cols() != self.state_dim() {
            return Err(EsnError::Dimension(format!(
                "states have width {}, readout expects {}",
                states.cols(),
                self.state_dim()
            )));
        }
        let mut out = DenseMatrix::zeros(states.rows(), self.output_dim());
        for (t, row) in states.row_iter().enumerate() {
            self.predict_row(row, out.row_mut(t));
        }
        Ok(out)
    }
}

/// Note on iff output ≥ threshold.
pub fn binarize(outputs: &DenseMatrix, threshold: f64) -> NoteMatrix {
    NoteMatrix::from_fn(outputs.rows(), outputs.cols(), |r, c| outputs.get(r, c) >= threshold)
}

/// Thresholds tried when tuning on the validation split: 0.1, 0.2, …, 0.9.
pub fn threshold_grid() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}
