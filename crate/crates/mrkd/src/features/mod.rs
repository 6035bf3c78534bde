//! Time-frequency representations of audio.
//!
//! One [`AudioClip`] becomes one [`FeatureMap`] per representation:
//! log-scaled mel spectrograms (64 or 128 bands), MFCC, or constant-Q
//! magnitudes, optionally stacked with delta and delta-delta channels.
//! All extraction runs in f64 and is cast to f32 at the end, so the same
//! clip and config always yield a bit-identical map.

mod cache;
mod cqt;
mod delta;
mod mel;
mod mfcc;
mod stats;
mod stft;

pub use cache::{cache_read, cache_write};
pub use cqt::{cqt, CqtKernel};
pub use delta::delta;
pub use mel::{build_mel_filterbank, logmel, MelFilterbank, MelScale};
pub use mfcc::{dct_ii_orthonormal, mfcc};
pub use stats::{FeatureStats, StatsAccumulator};
pub use stft::{stft, Spectrogram, Window};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;

/// Errors from feature extraction and the on-disk cache.
#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("corrupt feature cache: {0}")]
    CorruptCache(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Which representation a feature map holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationTag {
    LogMel64,
    LogMel128,
    Mfcc,
    Cqt,
}

impl RepresentationTag {
    pub fn code(self) -> u8 {
        match self {
            RepresentationTag::LogMel64 => 0,
            RepresentationTag::LogMel128 => 1,
            RepresentationTag::Mfcc => 2,
            RepresentationTag::Cqt => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(RepresentationTag::LogMel64),
            1 => Some(RepresentationTag::LogMel128),
            2 => Some(RepresentationTag::Mfcc),
            3 => Some(RepresentationTag::Cqt),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RepresentationTag::LogMel64 => "logmel64",
            RepresentationTag::LogMel128 => "logmel128",
            RepresentationTag::Mfcc => "mfcc",
            RepresentationTag::Cqt => "cqt",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "logmel64" => Some(RepresentationTag::LogMel64),
            "logmel128" => Some(RepresentationTag::LogMel128),
            "mfcc" => Some(RepresentationTag::Mfcc),
            "cqt" => Some(RepresentationTag::Cqt),
            _ => None,
        }
    }
}

impl std::fmt::Display for RepresentationTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A channels x time x frequency feature array for one clip.
///
/// When `channels == 3` the order is `[static, delta, delta-delta]`.
/// Every value is finite: log compression floors at the configured
/// epsilon instead of producing -inf.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Vec<f32>,
    channels: usize,
    time: usize,
    freq: usize,
    pub tag: RepresentationTag,
    pub hop_seconds: f32,
    pub clip_id: String,
}

impl FeatureMap {
    pub fn new(
        data: Vec<f32>,
        channels: usize,
        time: usize,
        freq: usize,
        tag: RepresentationTag,
        hop_seconds: f32,
        clip_id: impl Into<String>,
    ) -> Self {
        assert_eq!(data.len(), channels * time * freq, "shape/payload mismatch");
        debug_assert!(channels == 1 || channels == 3);
        Self {
            data,
            channels,
            time,
            freq,
            tag,
            hop_seconds,
            clip_id: clip_id.into(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn freq(&self) -> usize {
        self.freq
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn at(&self, c: usize, t: usize, f: usize) -> f32 {
        self.data[(c * self.time + t) * self.freq + f]
    }

    /// One channel as a contiguous time x freq slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.time * self.freq;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Extraction parameters for every representation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub representation: RepresentationTag,
    /// Analysis frame width in samples (80 ms at 44.1 kHz).
    pub frame_len: usize,
    /// Frame hop in samples (10 ms at 44.1 kHz).
    pub hop: usize,
    /// Mel bands for the logmel/mfcc path.
    pub n_mels: usize,
    /// Retained cepstral coefficients (incl. c0).
    pub n_mfcc: usize,
    /// HTK mel formula instead of the Slaney variant.
    pub htk_mel: bool,
    pub f_min: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub f_max: Option<f64>,
    pub cqt_f_min: f64,
    pub cqt_bins_per_octave: usize,
    pub cqt_n_bins: usize,
    /// 1 = static only, 3 = [static, delta, delta-delta].
    pub channels: usize,
    /// Floor inside the log so silence stays finite.
    pub log_floor: f64,
    /// Regression half-window for deltas (window size 9 => 4).
    pub delta_half_window: usize,
}

impl FeatureConfig {
    /// Defaults for a representation at 44.1 kHz.
    pub fn for_representation(tag: RepresentationTag) -> Self {
        let (n_mels, channels) = match tag {
            RepresentationTag::LogMel64 => (64, 3),
            RepresentationTag::LogMel128 => (128, 3),
            RepresentationTag::Mfcc => (64, 3),
            RepresentationTag::Cqt => (64, 1),
        };
        Self {
            representation: tag,
            frame_len: 3528,
            hop: 441,
            n_mels,
            n_mfcc: 40,
            htk_mel: false,
            f_min: 0.0,
            f_max: None,
            cqt_f_min: 32.70,
            cqt_bins_per_octave: 12,
            cqt_n_bins: 84,
            channels,
            log_floor: 1e-10,
            delta_half_window: 4,
        }
    }

    /// Frequency-axis size of the representation this config produces.
    pub fn feature_dim(&self) -> usize {
        match self.representation {
            RepresentationTag::LogMel64 | RepresentationTag::LogMel128 => self.n_mels,
            RepresentationTag::Mfcc => self.n_mfcc,
            RepresentationTag::Cqt => self.cqt_n_bins,
        }
    }

    /// Frame count for a clip of `len` samples.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        if len < self.frame_len {
            None
        } else {
            Some((len - self.frame_len) / self.hop + 1)
        }
    }
}

/// Extract the configured representation with channel stacking.
pub fn extract(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMap, FeatureError> {
    match cfg.representation {
        RepresentationTag::LogMel64 | RepresentationTag::LogMel128 => logmel(clip, cfg),
        RepresentationTag::Mfcc => mfcc(clip, cfg),
        RepresentationTag::Cqt => cqt(clip, cfg),
    }
}

/// Stack `[static, delta, delta-delta]` when the config asks for three
/// channels; pass the static plane through otherwise.
pub(crate) fn stack_channels(
    static_plane: Vec<f64>,
    time: usize,
    freq: usize,
    cfg: &FeatureConfig,
    sample_rate: u32,
    clip_id: &str,
) -> Result<FeatureMap, FeatureError> {
    let hop_seconds = cfg.hop as f32 / sample_rate as f32;
    let data = match cfg.channels {
        1 => static_plane.iter().map(|&v| v as f32).collect(),
        3 => {
            let d1 = delta(&static_plane, time, freq, cfg.delta_half_window)?;
            let d2 = delta(&d1, time, freq, cfg.delta_half_window)?;
            let mut out = Vec::with_capacity(3 * time * freq);
            out.extend(static_plane.iter().map(|&v| v as f32));
            out.extend(d1.iter().map(|&v| v as f32));
            out.extend(d2.iter().map(|&v| v as f32));
            out
        }
        n => {
            return Err(FeatureError::Parameter(format!(
                "channels must be 1 or 3, got {n}"
            )))
        }
    };
    Ok(FeatureMap::new(
        data,
        cfg.channels,
        time,
        freq,
        cfg.representation,
        hop_seconds,
        clip_id,
    ))
}
