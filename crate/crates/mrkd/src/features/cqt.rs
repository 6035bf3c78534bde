//! Constant-Q transform by direct correlation with windowed atoms.

use rustfft::num_complex::Complex;

use super::{stack_channels, FeatureConfig, FeatureError, FeatureMap};
use crate::audio::AudioClip;

/// Bank of complex CQT atoms, one per bin.
///
/// Bin `k` is centered at `f_min * 2^(k / bins_per_octave)` and analyzed
/// with an atom of `round(q * fs / f_k)` samples, where
/// `q = 1 / (2^(1/bins_per_octave) - 1)`. Atom length therefore scales
/// inversely with center frequency and the ratio of center frequency to
/// bandwidth stays constant across bins.
#[derive(Debug, Clone)]
pub struct CqtKernel {
    atoms: Vec<Vec<Complex<f64>>>,
    centers_hz: Vec<f64>,
    q: f64,
    sample_rate: u32,
}

impl CqtKernel {
    pub fn build(
        sample_rate: u32,
        f_min: f64,
        bins_per_octave: usize,
        n_bins: usize,
    ) -> Result<Self, FeatureError> {
        if !(f_min > 0.0) {
            return Err(FeatureError::Parameter(format!(
                "cqt f_min must be positive, got {f_min}"
            )));
        }
        if bins_per_octave == 0 || n_bins == 0 {
            return Err(FeatureError::Parameter(
                "cqt needs at least one bin and one bin per octave".into(),
            ));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let top = f_min * 2f64.powf((n_bins - 1) as f64 / bins_per_octave as f64);
        if top >= nyquist {
            return Err(FeatureError::Parameter(format!(
                "top cqt bin at {top:.1} Hz reaches the Nyquist limit {nyquist:.1} Hz; \
                 lower f_min or n_bins"
            )));
        }
        let q = 1.0 / (2f64.powf(1.0 / bins_per_octave as f64) - 1.0);
        let mut atoms = Vec::with_capacity(n_bins);
        let mut centers_hz = Vec::with_capacity(n_bins);
        for k in 0..n_bins {
            let f_k = f_min * 2f64.powf(k as f64 / bins_per_octave as f64);
            let n_k = (q * sample_rate as f64 / f_k).round() as usize;
            debug_assert!(n_k >= 2);
            let norm = 1.0 / n_k as f64;
            let atom: Vec<Complex<f64>> = (0..n_k)
                .map(|n| {
                    // periodic Hann, matching the STFT window
                    let w = 0.5
                        - 0.5
                            * (2.0 * std::f64::consts::PI * n as f64 / n_k as f64).cos();
                    let phase =
                        -2.0 * std::f64::consts::PI * f_k * n as f64 / sample_rate as f64;
                    Complex::from_polar(w * norm, phase)
                })
                .collect();
            atoms.push(atom);
            centers_hz.push(f_k);
        }
        Ok(Self {
            atoms,
            centers_hz,
            q,
            sample_rate,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.atoms.len()
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn center_hz(&self, k: usize) -> f64 {
        self.centers_hz[k]
    }

    /// Analysis bandwidth of bin `k`; `center_hz(k) / bandwidth_hz(k)`
    /// equals `q` for every bin.
    pub fn bandwidth_hz(&self, k: usize) -> f64 {
        self.centers_hz[k] / self.q
    }

    pub fn atom(&self, k: usize) -> &[Complex<f64>] {
        &self.atoms[k]
    }

    /// Correlate every atom against the signal around `center`, an index
    /// into `samples`. Out-of-range samples count as zero.
    fn analyze_at(&self, samples: &[f32], center: usize, out: &mut [f64], log_floor: f64) {
        for (k, atom) in self.atoms.iter().enumerate() {
            let half = atom.len() / 2;
            let start = center as isize - half as isize;
            let mut acc = Complex::new(0.0, 0.0);
            // clamp the atom to the in-range overlap instead of testing
            // every index
            let lo = (-start).max(0) as usize;
            let hi = atom
                .len()
                .min((samples.len() as isize - start).max(0) as usize);
            for n in lo..hi {
                let x = samples[(start + n as isize) as usize] as f64;
                acc += atom[n] * x;
            }
            out[k] = (acc.norm_sqr() + log_floor).ln();
        }
    }
}

/// Constant-Q magnitude map on the same frame grid as the STFT: frame `t`
/// is centered at `t * hop + frame_len / 2`.
pub fn cqt(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMap, FeatureError> {
    let frames = cfg.frame_count(clip.samples.len()).ok_or_else(|| {
        FeatureError::InvalidInput(format!(
            "clip {} has {} samples, need at least one frame of {}",
            clip.source_id,
            clip.samples.len(),
            cfg.frame_len
        ))
    })?;
    let kernel = CqtKernel::build(
        clip.sample_rate,
        cfg.cqt_f_min,
        cfg.cqt_bins_per_octave,
        cfg.cqt_n_bins,
    )?;
    let n_bins = kernel.n_bins();
    let mut plane = vec![0.0; frames * n_bins];
    for t in 0..frames {
        let center = t * cfg.hop + cfg.frame_len / 2;
        kernel.analyze_at(
            &clip.samples,
            center,
            &mut plane[t * n_bins..(t + 1) * n_bins],
            cfg.log_floor,
        );
    }
    stack_channels(plane, frames, n_bins, cfg, clip.sample_rate, &clip.source_id)
}
