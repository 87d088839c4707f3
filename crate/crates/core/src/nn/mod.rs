//! Small dense networks with exact reverse-mode gradients, Adam, and
//! exponential-moving-average parameter tracking. Everything is `f64`.

mod adam;
mod mlp;
mod similarity;

pub use adam::{Adam, AdamConfig};
pub use mlp::{Activation, ForwardCache, Gradients, Layer, Mlp};
pub use similarity::{cosine_similarity, cosine_with_grad, ema_update, ZERO_NORM};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("network needs at least one layer")]
    Empty,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("momentum {0} outside [0, 1]")]
    Momentum(f64),
}
