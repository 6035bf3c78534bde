//! Mel filterbanks and the log-mel spectrogram.

use super::{stack_channels, stft, FeatureConfig, FeatureError, FeatureMap, Window};
use crate::audio::AudioClip;

/// Mel scale variant. Slaney (linear below 1 kHz, logarithmic above) is
/// the default; HTK is `2595 * log10(1 + f/700)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MelScale {
    Slaney,
    Htk,
}

const SLANEY_F_SP: f64 = 200.0 / 3.0;
const SLANEY_MIN_LOG_HZ: f64 = 1000.0;
const SLANEY_MIN_LOG_MEL: f64 = SLANEY_MIN_LOG_HZ / SLANEY_F_SP;

fn slaney_logstep() -> f64 {
    (6.4f64).ln() / 27.0
}

pub(crate) fn hz_to_mel(hz: f64, scale: MelScale) -> f64 {
    match scale {
        MelScale::Htk => 2595.0 * (1.0 + hz / 700.0).log10(),
        MelScale::Slaney => {
            if hz < SLANEY_MIN_LOG_HZ {
                hz / SLANEY_F_SP
            } else {
                SLANEY_MIN_LOG_MEL + (hz / SLANEY_MIN_LOG_HZ).ln() / slaney_logstep()
            }
        }
    }
}

pub(crate) fn mel_to_hz(mel: f64, scale: MelScale) -> f64 {
    match scale {
        MelScale::Htk => 700.0 * (10f64.powf(mel / 2595.0) - 1.0),
        MelScale::Slaney => {
            if mel < SLANEY_MIN_LOG_MEL {
                mel * SLANEY_F_SP
            } else {
                SLANEY_MIN_LOG_HZ * ((mel - SLANEY_MIN_LOG_MEL) * slaney_logstep()).exp()
            }
        }
    }
}

/// Triangular mel filterbank over one-sided FFT bins.
///
/// Rows are triangles with centers equally spaced on the mel scale and
/// Slaney-style area normalization (each triangle scaled by
/// `2 / (right_edge - left_edge)`).
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// n_mels x n_bins row-major weights.
    weights: Vec<f64>,
    n_mels: usize,
    n_bins: usize,
    centers_hz: Vec<f64>,
    pub f_min: f64,
    pub f_max: f64,
    pub sample_rate: u32,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// Center frequency of band `m` in Hz.
    pub fn center_hz(&self, m: usize) -> f64 {
        self.centers_hz[m]
    }

    /// Filter a frames x bins power spectrogram into frames x n_mels.
    pub fn apply(&self, power: &[f64], frames: usize) -> Vec<f64> {
        assert_eq!(power.len(), frames * self.n_bins);
        let mut out = vec![0.0f64; frames * self.n_mels];
        for t in 0..frames {
            let spec = &power[t * self.n_bins..(t + 1) * self.n_bins];
            let row_out = &mut out[t * self.n_mels..(t + 1) * self.n_mels];
            for (m, o) in row_out.iter_mut().enumerate() {
                let w = self.row(m);
                let mut acc = 0.0;
                for (&wv, &pv) in w.iter().zip(spec.iter()) {
                    acc += wv * pv;
                }
                *o = acc;
            }
        }
        out
    }
}

/// Build a triangular filterbank with `n_mels` bands between `f_min` and
/// `f_max` for an `n_fft`-point transform.
pub fn build_mel_filterbank(
    sample_rate: u32,
    n_fft: usize,
    n_mels: usize,
    f_min: f64,
    f_max: f64,
    scale: MelScale,
) -> Result<MelFilterbank, FeatureError> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(0.0 <= f_min && f_min < f_max && f_max <= nyquist) {
        return Err(FeatureError::Parameter(format!(
            "need 0 <= f_min < f_max <= nyquist, got f_min={f_min}, f_max={f_max}, nyquist={nyquist}"
        )));
    }
    if n_mels < 2 {
        return Err(FeatureError::Parameter(format!(
            "n_mels must be >= 2, got {n_mels}"
        )));
    }
    if n_fft == 0 {
        return Err(FeatureError::Parameter("n_fft must be >= 1".into()));
    }

    let n_bins = n_fft / 2 + 1;
    let mel_min = hz_to_mel(f_min, scale);
    let mel_max = hz_to_mel(f_max, scale);
    // n_mels + 2 edge points, equally spaced in mel
    let points_hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_min + (mel_max - mel_min) * i as f64 / (n_mels + 1) as f64, scale))
        .collect();

    let bin_hz: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
        .collect();

    let mut weights = vec![0.0f64; n_mels * n_bins];
    for m in 0..n_mels {
        let (left, center, right) = (points_hz[m], points_hz[m + 1], points_hz[m + 2]);
        let norm = 2.0 / (right - left);
        for (k, &f) in bin_hz.iter().enumerate() {
            let rising = (f - left) / (center - left);
            let falling = (right - f) / (right - center);
            let w = rising.min(falling).max(0.0);
            weights[m * n_bins + k] = w * norm;
        }
    }

    Ok(MelFilterbank {
        weights,
        n_mels,
        n_bins,
        centers_hz: points_hz[1..=n_mels].to_vec(),
        f_min,
        f_max,
        sample_rate,
    })
}

/// Log-scaled mel spectrogram: `ln(mel(|STFT|^2) + floor)`.
pub fn logmel(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMap, FeatureError> {
    let (plane, frames) = logmel_plane(clip, cfg)?;
    stack_channels(plane, frames, cfg.n_mels, cfg, clip.sample_rate, &clip.source_id)
}

/// The static log-mel plane (frames x n_mels) plus frame count; shared by
/// the logmel and MFCC paths.
pub(crate) fn logmel_plane(
    clip: &AudioClip,
    cfg: &FeatureConfig,
) -> Result<(Vec<f64>, usize), FeatureError> {
    let scale = if cfg.htk_mel { MelScale::Htk } else { MelScale::Slaney };
    let f_max = cfg.f_max.unwrap_or(clip.sample_rate as f64 / 2.0);
    let fb = build_mel_filterbank(
        clip.sample_rate,
        cfg.frame_len,
        cfg.n_mels,
        cfg.f_min,
        f_max,
        scale,
    )?;
    let spec = stft(clip, cfg.frame_len, cfg.hop, Window::Hann)?;
    let frames = spec.frames();
    let mut plane = fb.apply(&spec.power(), frames);
    for v in &mut plane {
        *v = (*v + cfg.log_floor).ln();
    }
    Ok((plane, frames))
}
