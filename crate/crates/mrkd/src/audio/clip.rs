//! Mono sample buffers and length/rate canonicalization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AudioError;

/// A decoded mono audio clip.
///
/// Samples are finite and within [-1, 1]; the invariant is established by
/// the decoder and preserved by every operation here.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    /// Opaque identifier tying the clip back to its manifest row.
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32, source_id: impl Into<String>) -> Self {
        debug_assert!(sample_rate > 0);
        Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Clip duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Crop policy for [`pad_or_crop`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    /// Seeded random offset; reproducible across runs.
    TrainRandom,
    /// Deterministic center crop.
    EvalCenter,
}

/// Resample by linear interpolation between neighboring samples.
///
/// Output length is `round(len * target_rate / input_rate)`. Equal rates
/// return the input bit-exactly. Positions past the last sample hold its
/// value (edge hold).
pub fn resample_linear(clip: &AudioClip, target_rate: u32) -> AudioClip {
    assert!(target_rate > 0, "target_rate must be positive");
    if target_rate == clip.sample_rate {
        return clip.clone();
    }
    let in_len = clip.samples.len();
    let out_len =
        ((in_len as f64) * (target_rate as f64) / (clip.sample_rate as f64)).round() as usize;
    let mut out = Vec::with_capacity(out_len);
    if in_len == 0 {
        return AudioClip::new(out, target_rate, clip.source_id.clone());
    }
    let step = clip.sample_rate as f64 / target_rate as f64;
    for i in 0..out_len {
        let pos = i as f64 * step;
        let lo = pos.floor() as usize;
        if lo + 1 >= in_len {
            out.push(clip.samples[in_len - 1]);
        } else {
            let frac = (pos - lo as f64) as f32;
            out.push(clip.samples[lo] * (1.0 - frac) + clip.samples[lo + 1] * frac);
        }
    }
    AudioClip::new(out, target_rate, clip.source_id.clone())
}

/// Normalize a clip to exactly `target_len` samples.
///
/// Short clips are tiled (repeated) and truncated; tiling keeps the
/// spectral content where zero-padding would manufacture a silence class.
/// Long clips are cropped at a seeded random offset (`TrainRandom`) or
/// centered (`EvalCenter`).
pub fn pad_or_crop(
    clip: &AudioClip,
    target_len: usize,
    mode: CropMode,
    seed: u64,
) -> Result<AudioClip, AudioError> {
    assert!(target_len > 0, "target_len must be positive");
    let len = clip.samples.len();
    if len == 0 {
        return Err(AudioError::InvalidInput(format!(
            "cannot pad or crop empty clip {:?}",
            clip.source_id
        )));
    }
    let samples = if len == target_len {
        clip.samples.clone()
    } else if len < target_len {
        clip.samples
            .iter()
            .cycle()
            .take(target_len)
            .copied()
            .collect()
    } else {
        let max_offset = len - target_len;
        let offset = match mode {
            CropMode::EvalCenter => max_offset / 2,
            CropMode::TrainRandom => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.gen_range(0..=max_offset)
            }
        };
        clip.samples[offset..offset + target_len].to_vec()
    };
    Ok(AudioClip::new(
        samples,
        clip.sample_rate,
        clip.source_id.clone(),
    ))
}
