//! Deep Echo State Networks for multivariate next-step prediction.
//!
//! A [`reservoir::DeepReservoir`] is a stack of untrained leaky tanh
//! reservoirs; layer 1 reads the input and every higher layer reads the
//! layer below. A [`readout::RidgeReadout`] maps the concatenated states of
//! all layers to the outputs and is the only part fitted to targets.
//! [`ip`] adapts per-neuron gains and biases before the readout is trained,
//! [`metrics`] scores binarized predictions by frame-level accuracy, and
//! [`selection`] runs seeded grid searches over (ρ, a, σ, λ_r).

pub mod data;
pub mod error;
pub mod ip;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod readout;
pub mod reservoir;
pub mod selection;

pub use error::{EsnError, Result};
