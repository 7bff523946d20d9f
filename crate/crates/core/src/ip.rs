//! Intrinsic plasticity: online adaptation of per-neuron gain and bias so
//! that tanh outputs approach a Gaussian with mean `target_mean` and
//! standard deviation `target_std`.

use serde::{Deserialize, Serialize};

use crate::error::{EsnError, Result};
use crate::linalg::DenseMatrix;
use crate::reservoir::{DeepReservoir, StepBuffers};

/// Gains are clamped to this value when an update would make them non-positive.
pub const MIN_GAIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IpConfig {
    pub target_std: f64,
    pub target_mean: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for IpConfig {
    fn default() -> Self {
        Self {
            target_std: 0.1,
            target_mean: 0.0,
            learning_rate: 1e-3,
            epochs: 5,
        }
    }
}

impl IpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_std > 0.0 && self.target_std.is_finite()) {
            return Err(EsnError::Config(format!("IP target_std {} must be positive", self.target_std)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(EsnError::Config(format!(
                "IP learning_rate {} must be non-negative",
                self.learning_rate
            )));
        }
        if !self.target_mean.is_finite() {
            return Err(EsnError::Config("IP target_mean must be finite".into()));
        }
        Ok(())
    }
}

/// Outcome of one IP update on a vector of neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct IpStep {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    /// Number of gains clamped to [`MIN_GAIN`].
    pub clamped: usize,
}

/// Gaussian-target IP rule for tanh units, per neuron:
///
/// ```text
/// Δb = -η (-μ/σ² + (y/σ²)(2σ² + 1 - y² + μ y))
/// Δg = η/g + Δb · net
/// ```
///
/// where `y = tanh(g · net + b)`.
pub fn ip_update(net: &[f64], y: &[f64], gain: &[f64], bias: &[f64], cfg: &IpConfig) -> Result<IpStep> {
    let n = net.len();
    if y.len() != n || gain.len() != n || bias.len() != n {
        return Err(EsnError::Dimension("ip_update vectors differ in length".into()));
    }
    let mut out = IpStep {
        gain: gain.to_vec(),
        bias: bias.to_vec(),
        clamped: 0,
    };
    out.clamped = ip_update_in_place(net, y, &mut out.gain, &mut out.bias, cfg)?;
    Ok(out)
}

pub(crate) fn ip_update_in_place(
    net: &[f64],
    y: &[f64],
    gain: &mut [f64],
    bias: &mut [f64],
    cfg: &IpConfig,
) -> Result<usize> {
    let eta = cfg.learning_rate;
    let mu = cfg.target_mean;
    let var = cfg.target_std * cfg.target_std;
    let mut clamped = 0;
    for i in 0..net.len() {
        let (x, yi, g) = (net[i], y[i], gain[i]);
        if x.is_nan() || yi.is_nan() || g.is_nan() || bias[i].is_nan() {
            return Err(EsnError::Contract(format!("NaN reached IP update at neuron {i}")));
        }
        if g <= 0.0 {
            return Err(EsnError::Contract(format!("IP gain {g} at neuron {i} is not positive")));
        }
        let db = -eta * (-mu / var + (yi / var) * (2.0 * var + 1.0 - yi * yi + mu * yi));
        let dg = eta / g + db * x;
        bias[i] += db;
        gain[i] = g + dg;
        if gain[i] <= 0.0 {
            gain[i] = MIN_GAIN;
            clamped += 1;
        }
    }
    Ok(clamped)
}

/// Summary of a pre-training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IpReport {
    pub steps: usize,
    pub clamped_gains: usize,
}

/// Drives `model` through every sequence `cfg.epochs` times, in the given
/// order, updating every layer's gain and bias online after its own state
/// update at each step. The layer above then sees the state computed before
/// the update. Weight matrices are not touched. State resets to zero at the
/// start of every sequence.
pub fn pretrain_ip(model: &mut DeepReservoir, sequences: &[DenseMatrix], cfg: &IpConfig) -> Result<IpReport> {
    cfg.validate()?;
    if sequences.is_empty() {
        return Err(EsnError::Contract("IP pre-training needs at least one sequence".into()));
    }
    let mut report = IpReport::default();
    if cfg.learning_rate == 0.0 {
        return Ok(report);
    }
    for seq in sequences {
        if seq.cols() != model.input_dim() {
            return Err(EsnError::Dimension(format!(
                "sequence has {} columns, reservoir expects {}",
                seq.cols(),
                model.input_dim()
            )));
        }
    }
    for _ in 0..cfg.epochs {
        for seq in sequences {
            let mut bufs = StepBuffers::new(model);
            for u in seq.row_iter() {
                for l in 0..model.layers.len() {
                    bufs.advance_layer(model, l, u);
                    let layer = &mut model.layers[l];
                    report.clamped_gains += ip_update_in_place(
                        &bufs.net[l],
                        &bufs.act[l],
                        &mut layer.ip_gain,
                        &mut layer.ip_bias,
                        cfg,
                    )?;
                }
                report.steps += 1;
            }
        }
    }
    if report.clamped_gains > 0 {
        log::warn!("IP pre-training clamped {} gains to {MIN_GAIN}", report.clamped_gains);
    }
    Ok(report)
}

/// Per-layer tanh outputs for each step of `inputs`, one `T × N_R` matrix per layer.
pub fn collect_activations(model: &DeepReservoir, inputs: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
    let mut out: Vec<DenseMatrix> = model
        .layers
        .iter()
        .map(|l| DenseMatrix::zeros(inputs.rows(), l.units()))
        .collect();
    model.drive(inputs, |t, l, _net, act, _state| {
        out[l].row_mut(t).copy_from_slice(act);
    })?;
    Ok(out)
}

/// Mean over neurons of |std(activation) - target| for one layer's `T × N_R` activations.
pub fn mean_std_deviation_from(acts: &DenseMatrix, target: f64) -> f64 {
    let (t, n) = acts.shape();
    if t == 0 || n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for j in 0..n {
        let mean = (0..t).map(|i| acts.get(i, j)).sum::<f64>() / t as f64;
        let var = (0..t).map(|i| (acts.get(i, j) - mean).powi(2)).sum::<f64>() / t as f64;
        total += (var.sqrt() - target).abs();
    }
    total / n as f64
}

/// Mean over neurons of |mean(activation)|.
pub fn mean_abs_mean(acts: &DenseMatrix) -> f64 {
    let (t, n) = acts.shape();
    if t == 0 || n == 0 {
        return 0.0;
    }
    (0..n)
        .map(|j| ((0..t).map(|i| acts.get(i, j)).sum::<f64>() / t as f64).abs())
        .sum::<f64>()
        / n as f64
}
