//! Stochastic network models and their GMM propagation.

pub mod model;
pub mod propagate;
pub mod sample;

pub use model::{expected_spectral_bound, Activation, DeterministicLinear, Layer, SnnModel, StochasticLinear};
pub use propagate::{propagate, push_point_through_stochastic_linear, BoundLedger, LayerRecord, PropagationConfig};
pub use sample::sample_network;
