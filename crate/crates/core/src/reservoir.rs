//! Leaky-integrator tanh reservoirs and their deep stacks.
//!
//! Layer 1 is driven by the external input, layer `l > 1` by the state of
//! layer `l - 1` at the same time step. The global state is the
//! concatenation of all layer states.

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EsnError, Result};
use crate::linalg::{self, CsrMatrix, DenseMatrix, LeakyEffective, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReservoirConfig {
    pub n_layers: usize,
    pub units_per_layer: usize,
    pub input_dim: usize,
    pub leaky_rate: f64,
    pub spectral_radius: f64,
    pub input_scaling: f64,
    pub connectivity: f64,
    pub seed: u64,
}

impl ReservoirConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(EsnError::Config(msg));
        if self.n_layers == 0 {
            return fail("n_layers must be positive".into());
        }
        if self.units_per_layer == 0 {
            return fail("units_per_layer must be positive".into());
        }
        if self.input_dim == 0 {
            return fail("input_dim must be positive".into());
        }
        if !(self.leaky_rate > 0.0 && self.leaky_rate <= 1.0) {
            return fail(format!("leaky_rate {} outside (0, 1]", self.leaky_rate));
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius < 1.0) {
            return fail(format!("spectral_radius {} outside (0, 1)", self.spectral_radius));
        }
        if !(self.input_scaling > 0.0 && self.input_scaling.is_finite()) {
            return fail(format!("input_scaling {} must be positive", self.input_scaling));
        }
        if !(self.connectivity > 0.0 && self.connectivity <= 1.0) {
            return fail(format!("connectivity {} outside (0, 1]", self.connectivity));
        }
        Ok(())
    }

    pub fn total_units(&self) -> usize {
        self.n_layers * self.units_per_layer
    }
}

/// Recurrent matrix storage. Fully connected reservoirs stay dense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RecurrentWeights {
    Dense(DenseMatrix),
    Sparse(CsrMatrix),
}

impl RecurrentWeights {
    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            RecurrentWeights::Dense(m) => m.clone(),
            RecurrentWeights::Sparse(m) => m.to_dense(),
        }
    }

    pub fn dim(&self) -> usize {
        self.nrows()
    }
}

impl LinearOperator for RecurrentWeights {
    fn nrows(&self) -> usize {
        match self {
            RecurrentWeights::Dense(m) => m.rows(),
            RecurrentWeights::Sparse(m) => m.rows(),
        }
    }

    fn ncols(&self) -> usize {
        match self {
            RecurrentWeights::Dense(m) => m.cols(),
            RecurrentWeights::Sparse(m) => m.cols(),
        }
    }

    #[inline]
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            RecurrentWeights::Dense(m) => m.apply(x, out),
            RecurrentWeights::Sparse(m) => m.apply(x, out),
        }
    }
}

/// One reservoir layer: `x(t) = (1-a) x(t-1) + a tanh(g ⊙ (W_in d(t) + Ŵ x(t-1)) + b)`
/// where `d(t)` is the external input for the first layer and the state of
/// the layer below otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirLayer {
    pub recurrent: RecurrentWeights,
    pub input: DenseMatrix,
    pub leaky_rate: f64,
    pub ip_gain: Vec<f64>,
    pub ip_bias: Vec<f64>,
}

impl ReservoirLayer {
    /// Layer with identity intrinsic-plasticity parameters.
    pub fn new(recurrent: RecurrentWeights, input: DenseMatrix, leaky_rate: f64) -> Result<Self> {
        let n = recurrent.nrows();
        if recurrent.ncols() != n {
            return Err(EsnError::Dimension("recurrent matrix must be square".into()));
        }
        if input.rows() != n {
            return Err(EsnError::Dimension(format!(
                "input matrix has {} rows, layer has {n} units",
                input.rows()
            )));
        }
        if !(0.0..=1.0).contains(&leaky_rate) {
            return Err(EsnError::Config(format!("leaky_rate {leaky_rate} outside [0, 1]")));
        }
        Ok(Self {
            recurrent,
            input,
            leaky_rate,
            ip_gain: vec![1.0; n],
            ip_bias: vec![0.0; n],
        })
    }

    pub fn units(&self) -> usize {
        self.ip_gain.len()
    }

    pub fn drive_dim(&self) -> usize {
        self.input.cols()
    }

    /// `net = W_in d + Ŵ x_prev`, the pre-activation before gain and bias.
    #[inline]
    pub fn pre_activation_into(&self, drive: &[f64], x_prev: &[f64], net: &mut [f64], scratch: &mut [f64]) {
        assert_eq!(drive.len(), self.drive_dim(), "drive vector length");
        assert_eq!(x_prev.len(), self.units(), "state vector length");
        self.input.apply(drive, net);
        self.recurrent.apply(x_prev, scratch);
        for (n, s) in net.iter_mut().zip(scratch.iter()) {
            *n += s;
        }
    }

    /// Leaky update from a precomputed pre-activation. Writes the tanh
    /// output into `activation` and the new state into `out`.
    #[inline]
    pub fn mix_into(&self, net: &[f64], x_prev: &[f64], activation: &mut [f64], out: &mut [f64]) {
        let a = self.leaky_rate;
        for i in 0..out.len() {
            let y = (self.ip_gain[i] * net[i] + self.ip_bias[i]).tanh();
            activation[i] = y;
            out[i] = (1.0 - a) * x_prev[i] + a * y;
        }
    }

    pub fn step(&self, drive: &[f64], x_prev: &[f64]) -> Vec<f64> {
        let n = self.units();
        let mut net = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let mut act = vec![0.0; n];
        let mut out = vec![0.0; n];
        self.pre_activation_into(drive, x_prev, &mut net, &mut scratch);
        self.mix_into(&net, x_prev, &mut act, &mut out);
        out
    }

    /// ρ((1-a) I + a Ŵ)
    pub fn effective_spectral_radius(&self) -> Result<f64> {
        linalg::spectral_radius(&LeakyEffective {
            inner: &self.recurrent,
            leaky_rate: self.leaky_rate,
        })
    }
}

/// First-layer transition driven by the external input `u`.
pub fn step_first_layer(layer: &ReservoirLayer, u: &[f64], x_prev: &[f64]) -> Vec<f64> {
    layer.step(u, x_prev)
}

/// Higher-layer transition driven by the fresh state of the layer below.
pub fn step_higher_layer(layer: &ReservoirLayer, x_below: &[f64], x_prev: &[f64]) -> Vec<f64> {
    layer.step(x_below, x_prev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepReservoirState {
    pub layers: Vec<Vec<f64>>,
}

impl DeepReservoirState {
    pub fn zeros(model: &DeepReservoir) -> Self {
        Self {
            layers: model.layers.iter().map(|l| vec![0.0; l.units()]).collect(),
        }
    }

    pub fn concat(&self) -> Vec<f64> {
        self.layers.concat()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepReservoir {
    pub layers: Vec<ReservoirLayer>,
}

/// Draws a dense matrix uniform on [-1, 1] and rescales it to operator 2-norm `sigma`.
fn scaled_input_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sigma: f64) -> Result<DenseMatrix> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let mut m = DenseMatrix::from_row_major(rows, cols, data)?;
    let norm = linalg::operator_norm(&m)?;
    if norm == 0.0 || !norm.is_finite() {
        return Err(EsnError::Numerical(format!("input matrix has operator norm {norm}")));
    }
    m.scale(sigma / norm);
    Ok(m)
}

fn raw_recurrent(rng: &mut ChaCha8Rng, n: usize, connectivity: f64) -> Result<RecurrentWeights> {
    if connectivity >= 1.0 {
        let data = (0..n * n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        return Ok(RecurrentWeights::Dense(DenseMatrix::from_row_major(n, n, data)?));
    }
    let total = n * n;
    let nnz = (connectivity * total as f64).round() as usize;
    if nnz == 0 {
        return Err(EsnError::Init(format!(
            "connectivity {connectivity} leaves no recurrent weights in a {n}x{n} reservoir"
        )));
    }
    let positions = index::sample(rng, total, nnz);
    let triplets: Vec<(usize, usize, f64)> = positions
        .iter()
        .map(|p| (p / n, p % n, rng.gen_range(-1.0..=1.0)))
        .collect();
    Ok(RecurrentWeights::Sparse(CsrMatrix::from_triplets(n, n, &triplets)?))
}

/// Rescales `Ŵ` so that `ρ((1-a) I + a Ŵ) = target`.
///
/// The effective matrix `E = (1-a) I + a Ŵ` is scaled as a whole by
/// `c = target / ρ(E)` and `Ŵ` is recovered as `(c E - (1-a) I) / a`. For
/// `a = 1` this is plain scaling of `Ŵ`. For `a < 1` it adds
/// `(1-a)(c-1)/a` to the diagonal, which is what makes targets below
/// `1 - a` reachable.
pub fn rescale_effective(recurrent: &RecurrentWeights, leaky_rate: f64, target: f64) -> Result<RecurrentWeights> {
    let current = linalg::spectral_radius(&LeakyEffective {
        inner: recurrent,
        leaky_rate,
    })?;
    if current == 0.0 || !current.is_finite() {
        return Err(EsnError::Numerical(format!(
            "effective recurrent matrix has spectral radius {current}"
        )));
    }
    let c = target / current;
    let diag = (1.0 - leaky_rate) * (c - 1.0) / leaky_rate;
    Ok(match recurrent {
        RecurrentWeights::Dense(m) => {
            let mut m = m.clone();
            m.scale(c);
            if diag != 0.0 {
                m.add_diagonal(diag);
            }
            RecurrentWeights::Dense(m)
        }
        RecurrentWeights::Sparse(m) => RecurrentWeights::Sparse(m.affine_identity(c, diag)),
    })
}

impl DeepReservoir {
    pub fn from_layers(layers: Vec<ReservoirLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(EsnError::Config("a deep reservoir needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[1].drive_dim() != w[0].units() {
                return Err(EsnError::Dimension(format!(
                    "layer expects {}-dimensional drive but the layer below has {} units",
                    w[1].drive_dim(),
                    w[0].units()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].drive_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.layers.iter().map(ReservoirLayer::units).sum()
    }

    /// `step_deep` on a fresh state value.
    pub fn step(&self, u: &[f64], state: &DeepReservoirState) -> DeepReservoirState {
        step_deep(self, u, state)
    }

    /// Runs one sequence from the zero state, calling `visit(t, layer, net, activation, state)`
    /// after each layer update. Buffers are reused across steps.
    pub fn drive<F>(&self, inputs: &DenseMatrix, mut visit: F) -> Result<()>
    where
        F: FnMut(usize, usize, &[f64], &[f64], &[f64]),
    {
        if inputs.cols() != self.input_dim() {
            return Err(EsnError::Dimension(format!(
                "inputs have {} columns, reservoir expects {}",
                inputs.cols(),
                self.input_dim()
            )));
        }
        let mut bufs = StepBuffers::new(self);
        for (t, u) in inputs.row_iter().enumerate() {
            for l in 0..self.layers.len() {
                bufs.advance_layer(self, l, u);
                visit(t, l, &bufs.net[l], &bufs.act[l], &bufs.states[l]);
            }
        }
        Ok(())
    }
}

/// Per-sequence working memory.
pub(crate) struct StepBuffers {
    pub states: Vec<Vec<f64>>,
    pub net: Vec<Vec<f64>>,
    pub act: Vec<Vec<f64>>,
    next: Vec<f64>,
    scratch: Vec<f64>,
}

impl StepBuffers {
    pub fn new(model: &DeepReservoir) -> Self {
        let zeros = || model.layers.iter().map(|l| vec![0.0; l.units()]).collect::<Vec<_>>();
        let widest = model.layers.iter().map(ReservoirLayer::units).max().unwrap_or(0);
        Self {
            states: zeros(),
            net: zeros(),
            act: zeros(),
            next: vec![0.0; widest],
            scratch: vec![0.0; widest],
        }
    }

    /// Updates layer `l` in place; layer 0 reads `u`, others read the
    /// already-updated state of layer `l - 1`.
    #[inline]
    pub fn advance_layer(&mut self, model: &DeepReservoir, l: usize, u: &[f64]) {
        let layer = &model.layers[l];
        let n = layer.units();
        let (below, rest) = self.states.split_at_mut(l);
        let x_prev = &mut rest[0];
        let drive: &[f64] = if l == 0 { u } else { &below[l - 1] };
        layer.pre_activation_into(drive, x_prev, &mut self.net[l], &mut self.scratch[..n]);
        layer.mix_into(&self.net[l], x_prev, &mut self.act[l], &mut self.next[..n]);
        x_prev.copy_from_slice(&self.next[..n]);
    }
}

/// Builds a deep reservoir from `config`.
///
/// Every matrix is drawn uniform on [-1, 1] from a ChaCha8 stream seeded by
/// `config.seed`, layer by layer (input/inter-layer matrix first, then the
/// recurrent matrix). Input and inter-layer matrices are dense and rescaled
/// to operator 2-norm `input_scaling`. Recurrent matrices keep
/// `round(connectivity · N_R²)` nonzeros at uniformly sampled positions and
/// are rescaled with [`rescale_effective`].
pub fn init_deep_reservoir(config: &ReservoirConfig) -> Result<DeepReservoir> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.units_per_layer;
    let mut layers = Vec::with_capacity(config.n_layers);
    for l in 0..config.n_layers {
        let n_in = if l == 0 { config.input_dim } else { n };
        let input = scaled_input_matrix(&mut rng, n, n_in, config.input_scaling)?;
        let raw = raw_recurrent(&mut rng, n, config.connectivity)?;
        let recurrent = rescale_effective(&raw, config.leaky_rate, config.spectral_radius)?;
        layers.push(ReservoirLayer::new(recurrent, input, config.leaky_rate)?);
    }
    DeepReservoir::from_layers(layers)
}

/// One time step of the whole stack.
pub fn step_deep(model: &DeepReservoir, u: &[f64], state: &DeepReservoirState) -> DeepReservoirState {
    assert_eq!(state.layers.len(), model.n_layers(), "state layer count");
    let mut layers: Vec<Vec<f64>> = Vec::with_capacity(model.n_layers());
    for (l, layer) in model.layers.iter().enumerate() {
        let drive: &[f64] = if l == 0 { u } else { &layers[l - 1] };
        let next = layer.step(drive, &state.layers[l]);
        layers.push(next);
    }
    DeepReservoirState { layers }
}

/// Runs `inputs` (one row per time step) from the zero state and returns the
/// concatenated global states, dropping the first `washout` rows.
pub fn run_sequence(model: &DeepReservoir, inputs: &DenseMatrix, washout: usize) -> Result<DenseMatrix> {
    let t_len = inputs.rows();
    if t_len == 0 {
        return Err(EsnError::Contract("empty input sequence".into()));
    }
    if washout >= t_len {
        return Err(EsnError::Contract(format!(
            "washout {washout} leaves nothing of a {t_len}-step sequence"
        )));
    }
    let d = model.state_dim();
    let mut out = DenseMatrix::zeros(t_len - washout, d);
    let offsets: Vec<usize> = model
        .layers
        .iter()
        .scan(0, |acc, l| {
            let o = *acc;
            *acc += l.units();
            Some(o)
        })
        .collect();
    model.drive(inputs, |t, l, _net, _act, state| {
        if t >= washout {
            let row = out.row_mut(t - washout);
            row[offsets[l]..offsets[l] + state.len()].copy_from_slice(state);
        }
    })?;
    Ok(out)
}

/// A plain single-reservoir ESN, kept as a separate code path so the deep
/// stack's one-layer case can be checked against it.
#[derive(Debug, Clone)]
pub struct Esn {
    pub input: DenseMatrix,
    pub recurrent: RecurrentWeights,
    pub leaky_rate: f64,
}

impl Esn {
    pub fn from_layer(layer: &ReservoirLayer) -> Self {
        Self {
            input: layer.input.clone(),
            recurrent: layer.recurrent.clone(),
            leaky_rate: layer.leaky_rate,
        }
    }

    pub fn step(&self, u: &[f64], x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut win_u = vec![0.0; n];
        let mut w_x = vec![0.0; n];
        self.input.apply(u, &mut win_u);
        self.recurrent.apply(x, &mut w_x);
        let a = self.leaky_rate;
        (0..n)
            .map(|i| (1.0 - a) * x[i] + a * (win_u[i] + w_x[i]).tanh())
            .collect()
    }

    pub fn run(&self, inputs: &DenseMatrix) -> DenseMatrix {
        let n = self.recurrent.dim();
        let mut x = vec![0.0; n];
        let mut out = DenseMatrix::zeros(inputs.rows(), n);
        for (t, u) in inputs.row_iter().enumerate() {
            x = self.step(u, &x);
            out.row_mut(t).copy_from_slice(&x);
        }
        out
    }
}
