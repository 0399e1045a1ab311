//! Signatures: grid quantizations of Gaussians and mixtures.

pub mod grid;
pub mod scalar;
pub mod signature;

pub use grid::{allocate_grid, GridAllocation};
pub use scalar::{solve_quantizer_1d, Quantizer1D, QuantizerTable, DEFAULT_TABLE_SIZE, TABLE_VERSION};
pub use signature::{
    activation_signature_w2_bound, signature_of_gaussian, signature_of_mixture, ActivationBound, ComponentFrame,
    GridCell, Signature,
};
