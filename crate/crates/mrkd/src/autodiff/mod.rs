//! Dense tensors with reverse-mode autodiff.
//!
//! A [`Graph`] is a tape: every forward op appends a node holding its
//! output value and a closure that turns the node's gradient into its
//! parents' gradients. [`Graph::backward`] walks the tape once in
//! reverse. Graphs are cheap and short-lived; training builds one per
//! batch, keyed parameter gradients survive in [`Gradients`].
//!
//! Everything is generic over the element type: training runs in `f32`,
//! gradient-check oracles run the same code in `f64`.

mod checkpoint;
mod graph;
pub mod losses;
mod mixup;
mod ops;
mod optim;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use graph::{Gradients, Graph, ParamId, Var};
pub use losses::LossValues;
pub use mixup::{apply_mixup, sample_mixup, MixupDraw};
pub use ops::{BnStats, KlDirection, Mode, Padding};
pub use optim::{cosine_lr, sgd_step, OptimizerState};
pub use tensor::{Element, Tensor};

use thiserror::Error;

/// Errors from tensor ops, losses, the optimizer, and checkpoints.
#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[cfg(test)]
pub(crate) mod gradcheck;
