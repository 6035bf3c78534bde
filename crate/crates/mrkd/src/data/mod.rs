//! Dataset manifests, deterministic batching, and the synthetic corpus.

mod batcher;
mod manifest;
mod synth;

pub use batcher::{batch_tensor, batches, one_hot_targets};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use synth::{class_fundamental, gen_synthetic, SynthSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest error at row {row}: {detail}")]
    Manifest { row: usize, detail: String },

    #[error("manifest error: {0}")]
    Invalid(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent RNG seed from a base seed and a key path, e.g.
/// (branch seed, cycle, epoch). Order-sensitive, collision-resistant
/// enough for stream separation.
pub fn stream_seed(base: u64, parts: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &p in parts {
        s = splitmix64(s ^ p.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    s
}
