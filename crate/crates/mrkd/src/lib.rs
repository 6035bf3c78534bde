//! # mrkd — multi-representation knowledge distillation for audio
//!
//! A desk-scale training toolkit for audio classification. Several branch
//! networks, each fed a different time-frequency view of the same audio
//! (logMel, MFCC, CQT), are trained cyclically against a shared teacher
//! built by averaging the branches' temperature-softened predictions.
//! After training, any single branch can be used alone, or all branches
//! can be ensembled for the best accuracy.
//!
//! The crate is self-contained: it ships its own WAV decoder, DSP
//! front-end, reverse-mode autodiff engine, two small CNN families, the
//! cyclic distillation loop, and audio-level evaluation.
//!
//! ```
//! use mrkd::autodiff::losses;
//!
//! // Soft labels: temperature-softened softmax over class logits.
//! let soft = losses::soften_rows(&[1.0f32, 2.0, 3.0], 3, 2.0).unwrap();
//! let sum: f32 = soft.iter().sum();
//! assert!((sum - 1.0).abs() < 1e-6);
//! ```
//!
//! See the `book/` guide at the repository root for a narrative tour; its
//! chapters are compiled as doc-tests through [`book`].

pub mod audio;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod features;
pub mod models;

pub mod book;

pub use error::Error;

/// Canonical sample rate in Hz. Inputs at other rates are resampled.
pub const CANONICAL_SAMPLE_RATE: u32 = 44_100;

/// Canonical analysis length in samples (1.5 s at 44.1 kHz), chosen so
/// 80 ms frames at a 10 ms hop give ~150 frames per clip.
pub const CANONICAL_CLIP_LEN: usize = 66_150;
