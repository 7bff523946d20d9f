//! Browser bindings for three interactive views of a deep reservoir: state
//! traces per layer, the spectrum of a layer's effective recurrent matrix,
//! and next-step piano-roll prediction on a generated corpus.
//!
//! Every export takes and returns a JSON string. The typed functions behind
//! them are public so they can be tested natively.

use deepesn::data::{synthetic_dataset, SyntheticSpec};
use deepesn::ip::IpConfig;
use deepesn::linalg::{eigenvalues, DenseMatrix, LeakyEffective};
use deepesn::metrics::{aggregate_acc, Aggregation};
use deepesn::pipeline::{adapt, collect_training, evaluate_counts, predict_sequence, PreparedDataset};
use deepesn::readout::binarize;
use deepesn::reservoir::{init_deep_reservoir, DeepReservoir, ReservoirConfig};
use deepesn::{EsnError, Result};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Size caps so a slider cannot freeze the tab.
const MAX_UNITS: usize = 400;
const MAX_LAYERS: usize = 10;
const MAX_STEPS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReservoirParams {
    pub layers: usize,
    pub units: usize,
    pub spectral_radius: f64,
    pub leaky_rate: f64,
    pub input_scaling: f64,
    pub connectivity: f64,
    pub seed: u64,
}

impl Default for ReservoirParams {
    fn default() -> Self {
        Self {
            layers: 4,
            units: 50,
            spectral_radius: 0.9,
            leaky_rate: 0.5,
            input_scaling: 1.0,
            connectivity: 0.1,
            seed: 0,
        }
    }
}

impl ReservoirParams {
    fn build(&self, input_dim: usize) -> Result<DeepReservoir> {
        if self.units > MAX_UNITS || self.layers > MAX_LAYERS {
            return Err(EsnError::Config(format!(
                "demo is capped at {MAX_LAYERS} layers of {MAX_UNITS} units"
            )));
        }
        init_deep_reservoir(&ReservoirConfig {
            n_layers: self.layers,
            units_per_layer: self.units,
            input_dim,
            leaky_rate: self.leaky_rate,
            spectral_radius: self.spectral_radius,
            input_scaling: self.input_scaling,
            connectivity: self.connectivity,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// One unit impulse at t = 0, then silence.
    Pulse,
    Sine,
    /// Square wave with a period of 50 steps.
    Square,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRequest {
    #[serde(flatten)]
    pub reservoir: ReservoirParams,
    pub signal: Signal,
    pub steps: usize,
    /// Units per layer whose trajectories are returned.
    #[serde(default = "default_traced")]
    pub traced_units: usize,
}

fn default_traced() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    /// `units[i][t]` for the first `traced_units` units.
    pub units: Vec<Vec<f64>>,
    /// Euclidean norm of the layer state at each step.
    pub norm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceResponse {
    pub input: Vec<f64>,
    pub layers: Vec<LayerTrace>,
}

fn signal_value(signal: Signal, t: usize) -> f64 {
    match signal {
        Signal::Pulse => f64::from(u8::from(t == 0)),
        Signal::Sine => (t as f64 * 0.1).sin(),
        Signal::Square => {
            if (t / 25).is_multiple_of(2) {
                1.0
            } else {
                -1.0
            }
        }
    }
}

/// Drives a freshly initialized reservoir with a scalar signal.
pub fn layer_traces(req: &TraceRequest) -> Result<TraceResponse> {
    if req.steps == 0 || req.steps > MAX_STEPS {
        return Err(EsnError::Config(format!("steps must be in 1..={MAX_STEPS}")));
    }
    let model = req.reservoir.build(1)?;
    let input: Vec<f64> = (0..req.steps).map(|t| signal_value(req.signal, t)).collect();
    let inputs = DenseMatrix::from_row_major(req.steps, 1, input.clone())?;
    let k = req.traced_units.min(req.reservoir.units);
    let mut layers: Vec<LayerTrace> = (0..model.n_layers())
        .map(|_| LayerTrace {
            units: vec![Vec::with_capacity(req.steps); k],
            norm: Vec::with_capacity(req.steps),
        })
        .collect();
    model.drive(&inputs, |_, l, _, _, state| {
        let trace = &mut layers[l];
        for (i, series) in trace.units.iter_mut().enumerate() {
            series.push(state[i]);
        }
        trace.norm.push(state.iter().map(|x| x * x).sum::<f64>().sqrt());
    })?;
    Ok(TraceResponse { input, layers })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRequest {
    #[serde(flatten)]
    pub reservoir: ReservoirParams,
    /// Which layer to inspect, 0-based.
    #[serde(default)]
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResponse {
    /// Eigenvalues of `(1-a) I + a Ŵ` as `[re, im]`.
    pub eigenvalues: Vec<[f64; 2]>,
    pub spectral_radius: f64,
    /// Eigenvalues of `Ŵ` alone.
    pub recurrent_eigenvalues: Vec<[f64; 2]>,
}

/// Spectrum of one layer after initialization.
pub fn layer_spectrum(req: &SpectrumRequest) -> Result<SpectrumResponse> {
    let model = req.reservoir.build(1)?;
    let layer = model
        .layers
        .get(req.layer)
        .ok_or_else(|| EsnError::Config(format!("layer {} out of range", req.layer)))?;
    let pairs = |v: Vec<(f64, f64)>| v.into_iter().map(|(re, im)| [re, im]).collect::<Vec<_>>();
    let effective = eigenvalues(&LeakyEffective {
        inner: &layer.recurrent,
        leaky_rate: layer.leaky_rate,
    })?;
    let spectral_radius = effective.iter().map(|(re, im)| re.hypot(*im)).fold(0.0, f64::max);
    Ok(SpectrumResponse {
        eigenvalues: pairs(effective),
        spectral_radius,
        recurrent_eigenvalues: pairs(eigenvalues(&layer.recurrent)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollRequest {
    #[serde(flatten)]
    pub reservoir: ReservoirParams,
    /// Notes per frame of the generated corpus.
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub intrinsic_plasticity: bool,
    #[serde(default)]
    pub data_seed: u64,
}

fn default_dim() -> usize {
    12
}

fn default_ridge() -> f64 {
    1e-2
}

fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollResponse {
    /// `target[t][note]` for the first test sequence.
    pub target: Vec<Vec<bool>>,
    pub predicted: Vec<Vec<bool>>,
    /// Raw readout outputs before thresholding.
    pub outputs: Vec<Vec<f64>>,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Trains a readout on a generated corpus and predicts its first test sequence.
pub fn predict_rolls(req: &RollRequest) -> Result<RollResponse> {
    let spec = SyntheticSpec {
        dim: req.dim,
        train: 12,
        valid: 1,
        test: 3,
        min_len: 40,
        max_len: 80,
        chords: 4,
        ..SyntheticSpec::smoke()
    };
    let ds = synthetic_dataset("demo", &spec, req.data_seed)?;
    let data = PreparedDataset::new(&ds)?;
    let mut model = req.reservoir.build(req.dim)?;
    if req.intrinsic_plasticity {
        adapt(&mut model, &data.train, &IpConfig::default())?;
    }
    let mut readout = collect_training(&model, &data.train, 0)?.solve(req.ridge)?;
    readout.threshold = req.threshold;
    let score = |split| -> Result<f64> {
        let counts = evaluate_counts(&model, std::slice::from_ref(&readout), split, &[req.threshold], 0)?;
        Ok(aggregate_acc(&counts[0][0], Aggregation::Pooled))
    };
    let train_acc = score(&data.train)?;
    let test_acc = score(&data.test)?;
    let outputs = predict_sequence(&model, &readout, &data.test.inputs[0])?;
    let predicted = binarize(&outputs, req.threshold);
    let target = &data.test.targets[0];
    Ok(RollResponse {
        target: (0..target.rows()).map(|r| target.row(r).to_vec()).collect(),
        predicted: (0..predicted.rows()).map(|r| predicted.row(r).to_vec()).collect(),
        outputs: outputs.row_iter().map(<[f64]>::to_vec).collect(),
        train_acc,
        test_acc,
    })
}

fn call<Req, Resp>(json: &str, f: impl FnOnce(&Req) -> Result<Resp>) -> std::result::Result<String, JsError>
where
    Req: for<'de> Deserialize<'de>,
    Resp: Serialize,
{
    let req: Req = serde_json::from_str(json).map_err(|e| JsError::new(&format!("bad request: {e}")))?;
    let resp = f(&req).map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&resp).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = layerTraces)]
pub fn layer_traces_js(request: &str) -> std::result::Result<String, JsError> {
    call(request, layer_traces)
}

#[wasm_bindgen(js_name = layerSpectrum)]
pub fn layer_spectrum_js(request: &str) -> std::result::Result<String, JsError> {
    call(request, layer_spectrum)
}

#[wasm_bindgen(js_name = predictRolls)]
pub fn predict_rolls_js(request: &str) -> std::result::Result<String, JsError> {
    call(request, predict_rolls)
}
