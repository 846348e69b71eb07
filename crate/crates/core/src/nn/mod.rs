//! Small dense networks with hand-written reverse mode, Adam, and the
//! squashed Gaussian policy head.
//!
//! # Checkpoint format
//!
//! Networks and optimizer states are written with [`crate::codec`]:
//!
//! ```text
//! Mlp:       "TRAYMLP\0" u32 version=1
//!            u64 n_sizes, n_sizes x u64 layer sizes
//!            u64 n_params, n_params x f64 (layer by layer: W row-major (in, out), then b)
//! AdamState: "TRAYADAM" u32 version=1
//!            f64 lr, f64 beta1, f64 beta2, f64 eps, u64 step
//!            u64 n, n x f64 first moment
//!            u64 n, n x f64 second moment
//! ```
//!
//! All integers and floats are little-endian; floats are raw IEEE-754 bits.

mod activation;
mod adam;
mod gaussian;
mod mlp;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use gaussian::{
    squash_sample, tanh_correction, tanh_correction_grad, GaussianHead, SquashedSample,
    LOG_STD_MAX, LOG_STD_MIN, TANH_EPS,
};
pub use mlp::{Activations, Mlp};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{what} shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}
