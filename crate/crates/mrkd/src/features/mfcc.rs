//! MFCCs: an orthonormal DCT-II over the log-mel axis.

use super::mel::logmel_plane;
use super::{stack_channels, FeatureConfig, FeatureError, FeatureMap};
use crate::audio::AudioClip;

/// Orthonormal DCT-II matrix, `n_coeffs x n`, row-major.
///
/// Row 0 is scaled by `sqrt(1/n)`, the rest by `sqrt(2/n)`, so the transform
/// preserves the L2 norm when `n_coeffs == n`.
pub fn dct_ii_orthonormal(n_coeffs: usize, n: usize) -> Vec<f64> {
    let mut mat = vec![0.0; n_coeffs * n];
    let norm0 = (1.0 / n as f64).sqrt();
    let norm = (2.0 / n as f64).sqrt();
    for k in 0..n_coeffs {
        let scale = if k == 0 { norm0 } else { norm };
        for j in 0..n {
            let angle = std::f64::consts::PI * (j as f64 + 0.5) * k as f64 / n as f64;
            mat[k * n + j] = scale * angle.cos();
        }
    }
    mat
}

/// MFCC feature map: DCT-II of the log-mel plane, keeping `n_mfcc`
/// coefficients per frame, then delta stacking per the config.
pub fn mfcc(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMap, FeatureError> {
    if cfg.n_mfcc == 0 {
        return Err(FeatureError::Parameter(
            "n_mfcc must be at least 1".into(),
        ));
    }
    if cfg.n_mfcc > cfg.n_mels {
        return Err(FeatureError::Parameter(format!(
            "n_mfcc ({}) cannot exceed n_mels ({})",
            cfg.n_mfcc, cfg.n_mels
        )));
    }
    let (logmel, frames) = logmel_plane(clip, cfg)?;
    let dct = dct_ii_orthonormal(cfg.n_mfcc, cfg.n_mels);
    let mut plane = vec![0.0; frames * cfg.n_mfcc];
    for t in 0..frames {
        let row = &logmel[t * cfg.n_mels..(t + 1) * cfg.n_mels];
        for k in 0..cfg.n_mfcc {
            let basis = &dct[k * cfg.n_mels..(k + 1) * cfg.n_mels];
            plane[t * cfg.n_mfcc + k] = row
                .iter()
                .zip(basis)
                .map(|(&x, &b)| x * b)
                .sum();
        }
    }
    stack_channels(plane, frames, cfg.n_mfcc, cfg, clip.sample_rate, &clip.source_id)
}
