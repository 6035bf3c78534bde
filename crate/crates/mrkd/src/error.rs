//! Crate-level error type aggregating the per-module errors.

use thiserror::Error;

/// Any error the toolkit can produce.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),

    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),

    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),

    #[error(transparent)]
    Model(#[from] crate::models::ModelError),

    #[error(transparent)]
    Data(#[from] crate::data::DataError),

    #[error(transparent)]
    Distill(#[from] crate::distill::DistillError),

    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),

    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
