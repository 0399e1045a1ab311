//! Mixture compression: k-means reduction of Gaussian mixtures and
//! truncated dropout expansions of discrete distributions.

mod compress;
mod discrete;
pub(crate) mod dropout;

pub use compress::{compress_gmm, CompressionResult, LLOYD_MAX_ITERS};
pub use discrete::DiscreteDist;
pub use dropout::{compress_dropout, dropout_dimension_scores, expand_dropout, DropoutCompression};
