//! Minimal dense numeric core for the tag models: matrices of `f64`,
//! reverse-mode differentiation on a tape, standard layers, binary
//! cross-entropy, Adam, finite-difference checking and checkpoints.

pub mod batch;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod param;
pub mod rng;
pub mod tape;

pub use checkpoint::{Checkpoint, Storage};
pub use error::{NnError, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{GruCell, LayerNorm, Linear, TagPredictor};
pub use optim::Adam;
pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{sigmoid, Mode, Tape, Var};

/// Dense tensor type used throughout: a row-major matrix. Vectors are
/// `1 x n`.
pub type Tensor = ndarray::Array2<f64>;
