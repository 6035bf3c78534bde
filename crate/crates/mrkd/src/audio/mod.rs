//! Audio decoding and normalization.
//!
//! Everything downstream works on [`AudioClip`]: mono, f32 samples in
//! [-1, 1] at a known sample rate. This module gets arbitrary PCM WAV
//! files into that shape — decode, mix to mono, resample, and fix the
//! length with a tile/crop policy.

mod clip;
mod wav;

pub use clip::{pad_or_crop, resample_linear, AudioClip, CropMode};
pub use wav::{load_wav, write_wav_i16};

use thiserror::Error;

/// Errors from audio decoding and shaping.
#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed wav: {0}")]
    MalformedWav(String),

    #[error("unsupported wav format: {field} = {value}")]
    UnsupportedFormat { field: &'static str, value: u32 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}
