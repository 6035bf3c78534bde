//! Short-time Fourier transform over fixed-width frames.

use rustfft::{num_complex::Complex, FftPlanner};

use super::FeatureError;
use crate::audio::AudioClip;

/// Analysis window shape. The pipeline always uses Hann; the rectangular
/// window exists for spectral tests that need unsmeared bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
    Rectangular,
}

/// One-sided complex spectrogram, frames x bins.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    data: Vec<Complex<f64>>,
    frames: usize,
    bins: usize,
    pub frame_len: usize,
    pub hop: usize,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn at(&self, t: usize, f: usize) -> Complex<f64> {
        self.data[t * self.bins + f]
    }

    pub fn frame(&self, t: usize) -> &[Complex<f64>] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    /// |X|^2 per cell, frames x bins row-major.
    pub fn power(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Periodic Hann window of length `len`.
pub(crate) fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Frame, window, and Fourier-transform a clip.
///
/// Frame `t` covers samples `[t*hop, t*hop + frame_len)`; the spectrum is
/// one-sided with `frame_len/2 + 1` bins of the unnormalized DFT. The
/// frame count is `floor((len - frame_len)/hop) + 1`.
pub fn stft(
    clip: &AudioClip,
    frame_len: usize,
    hop: usize,
    window: Window,
) -> Result<Spectrogram, FeatureError> {
    if hop == 0 {
        return Err(FeatureError::Parameter("hop must be >= 1".into()));
    }
    if frame_len == 0 {
        return Err(FeatureError::Parameter("frame_len must be >= 1".into()));
    }
    if clip.samples.len() < frame_len {
        return Err(FeatureError::InvalidInput(format!(
            "clip {:?} has {} samples, shorter than one {}-sample frame",
            clip.source_id,
            clip.samples.len(),
            frame_len
        )));
    }
    let frames = (clip.samples.len() - frame_len) / hop + 1;
    let bins = frame_len / 2 + 1;

    let win = match window {
        Window::Hann => hann(frame_len),
        Window::Rectangular => vec![1.0; frame_len],
    };

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(frame_len);
    let mut buf = vec![Complex::new(0.0, 0.0); frame_len];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];

    let mut data = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let start = t * hop;
        for (b, (&s, &w)) in buf
            .iter_mut()
            .zip(clip.samples[start..start + frame_len].iter().zip(win.iter()))
        {
            *b = Complex::new(s as f64 * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend_from_slice(&buf[..bins]);
    }

    Ok(Spectrogram {
        data,
        frames,
        bins,
        frame_len,
        hop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::AudioClip;

    fn clip(samples: Vec<f32>) -> AudioClip {
        AudioClip::new(samples, 44_100, "t")
    }

    #[test]
    fn zero_clip_gives_zero_spectrum() {
        let s = stft(&clip(vec![0.0; 1024]), 256, 128, Window::Hann).unwrap();
        assert_eq!(s.frames(), 7);
        assert_eq!(s.bins(), 129);
        assert!(s.power().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn frame_count_formula() {
        let s = stft(&clip(vec![0.0; 66_150]), 3528, 441, Window::Hann).unwrap();
        assert_eq!(s.frames(), 143);
        assert_eq!(s.bins(), 1765);
    }

    #[test]
    fn too_short_clip_is_rejected() {
        assert!(matches!(
            stft(&clip(vec![0.0; 100]), 256, 128, Window::Hann),
            Err(FeatureError::InvalidInput(_))
        ));
    }

    /// Brute-force O(n^2) DFT, one-sided.
    fn dft_oracle(x: &[f64]) -> Vec<Complex<f64>> {
        let n = x.len();
        (0..n / 2 + 1)
            .map(|k| {
                let mut acc = Complex::new(0.0, 0.0);
                for (j, &v) in x.iter().enumerate() {
                    let angle = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                    acc += Complex::new(angle.cos(), angle.sin()) * v;
                }
                acc
            })
            .collect()
    }

    fn noise(len: usize, seed: u64) -> Vec<f32> {
        (0..len)
            .map(|i| {
                let h = (i as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ seed;
                (h % 65_536) as f32 / 32_768.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn transform_matches_direct_summation_oracle() {
        for &n in &[64usize, 441, 1024, 4096] {
            let samples = noise(n, 0x5eed ^ n as u64);
            let s = stft(&clip(samples.clone()), n, n, Window::Rectangular).unwrap();
            let want = dft_oracle(&samples.iter().map(|&v| v as f64).collect::<Vec<_>>());
            let scale = want.iter().map(|c| c.norm()).fold(0.0, f64::max);
            for (k, w) in want.iter().enumerate() {
                let got = s.at(0, k);
                assert!(
                    (got - w).norm() <= 1e-6 * scale,
                    "n={n} bin {k}: {got} vs {w}"
                );
            }
        }
    }

    #[test]
    fn windowed_frame_energy_survives_the_transform() {
        // Unnormalized DFT: two-sided spectral energy equals n times the
        // windowed time-domain energy.
        let n = 1024;
        let hop = 512;
        let samples = noise(4096, 0xabcdef);
        let s = stft(&clip(samples.clone()), n, hop, Window::Hann).unwrap();
        let win = hann(n);
        let mut spectral = 0.0;
        let mut temporal = 0.0;
        for t in 0..s.frames() {
            for k in 0..s.bins() {
                let e = s.at(t, k).norm_sqr();
                // one-sided storage: interior bins stand for a conjugate pair
                let double = k != 0 && !(n % 2 == 0 && k == n / 2);
                spectral += if double { 2.0 * e } else { e };
            }
            for (j, &w) in win.iter().enumerate() {
                let v = samples[t * hop + j] as f64 * w;
                temporal += v * v;
            }
        }
        let want = n as f64 * temporal;
        assert!(
            (spectral - want).abs() <= 1e-6 * want,
            "{spectral} vs {want}"
        );
    }

    #[test]
    fn bin_center_sine_concentrates_with_rectangular_window() {
        // k * fs / frame_len with k=8, frame_len=256
        let frame_len = 256;
        let k = 8;
        let fs = 44_100.0f64;
        let f = k as f64 * fs / frame_len as f64;
        let samples: Vec<f32> = (0..frame_len)
            .map(|n| (2.0 * std::f64::consts::PI * f * n as f64 / fs).sin() as f32)
            .collect();
        let s = stft(&clip(samples), frame_len, frame_len, Window::Rectangular).unwrap();
        let power = s.power();
        let argmax = power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, k);
        // everything away from bin k is numerically negligible
        let peak = power[k];
        for (i, &p) in power.iter().enumerate() {
            if i != k {
                assert!(p < peak * 1e-10, "bin {i} holds {p}, peak {peak}");
            }
        }
    }
}
