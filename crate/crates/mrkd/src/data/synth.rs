//! Synthetic labeled corpus: harmonic tones with class-keyed structure.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{stream_seed, DataError, DatasetManifest, Split};
use crate::audio::{write_wav_i16, AudioClip};
use crate::{CANONICAL_CLIP_LEN, CANONICAL_SAMPLE_RATE};

/// Highest class count for which every partial of every class stays
/// comfortably below Nyquist at the canonical rate.
pub const MAX_SYNTH_CLASSES: usize = 20;

const PARTIALS: usize = 3;
const SNR_DB: f64 = 10.0;
const TEST_FRACTION: f64 = 0.2;
const PEAK: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub clips_per_class: usize,
    pub seed: u64,
    /// Fraction of train rows whose manifest label is rewritten to a
    /// uniformly random other class. Audio content is untouched.
    pub label_corruption: f64,
}

impl SynthSpec {
    pub fn new(n_classes: usize, clips_per_class: usize, seed: u64) -> Self {
        Self {
            n_classes,
            clips_per_class,
            seed,
            label_corruption: 0.0,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.n_classes < 2 || self.n_classes > MAX_SYNTH_CLASSES {
            return Err(DataError::Parameter(format!(
                "n_classes must be in 2..={MAX_SYNTH_CLASSES}, got {}",
                self.n_classes
            )));
        }
        if self.clips_per_class == 0 {
            return Err(DataError::Parameter("clips_per_class must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.label_corruption) {
            return Err(DataError::Parameter(format!(
                "label_corruption must be in [0, 1], got {}",
                self.label_corruption
            )));
        }
        Ok(())
    }
}

/// Fundamental frequency of class `c` in Hz: a geometric ladder so
/// neighboring classes differ by a fixed ratio.
pub fn class_fundamental(c: usize) -> f64 {
    180.0 * 1.22f64.powi(c as i32)
}

/// Render one clip of class `c`. Three partials over a class-keyed
/// amplitude slope, one of three temporal envelopes rotating by
/// `c mod 3` (steady, 4 Hz tremolo, upward chirp), plus lowpassed
/// noise at a fixed SNR. Deterministic in the clip's RNG stream.
fn render_clip(c: usize, n_classes: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let sr = CANONICAL_SAMPLE_RATE as f64;
    let n = CANONICAL_CLIP_LEN;
    let duration = n as f64 / sr;
    let nyquist_guard = 0.45 * sr;

    let f0 = class_fundamental(c) * (1.0 + 0.02 * (rng.gen::<f64>() * 2.0 - 1.0));
    let slope = 0.3 + 0.4 * c as f64 / (n_classes - 1).max(1) as f64;
    let phases: Vec<f64> = (0..PARTIALS)
        .map(|_| rng.gen::<f64>() * std::f64::consts::TAU)
        .collect();
    let tremolo_phase = rng.gen::<f64>() * std::f64::consts::TAU;

    let envelope_kind = c % 3;
    // Chirp classes sweep the fundamental up by 30% across the clip.
    let chirp = if envelope_kind == 2 { 0.3 } else { 0.0 };

    let mut signal = vec![0.0f64; n];
    for (k, &phase) in phases.iter().enumerate() {
        let harmonic = (k + 1) as f64;
        if harmonic * f0 * (1.0 + chirp) >= nyquist_guard {
            continue;
        }
        let amp = slope.powi(k as i32);
        for (i, s) in signal.iter_mut().enumerate() {
            let t = i as f64 / sr;
            // Instantaneous frequency f0*(1 + chirp*t/T) integrates to this phase.
            let theta = std::f64::consts::TAU * harmonic * f0 * (t + 0.5 * chirp * t * t / duration);
            *s += amp * (theta + phase).sin();
        }
    }
    if envelope_kind == 1 {
        for (i, s) in signal.iter_mut().enumerate() {
            let t = i as f64 / sr;
            *s *= 0.55 + 0.45 * (std::f64::consts::TAU * 4.0 * t + tremolo_phase).sin();
        }
    }

    // Lowpassed white noise, scaled to sit SNR_DB below the signal power.
    let mut noise = vec![0.0f64; n];
    let mut state = 0.0f64;
    for v in noise.iter_mut() {
        state = 0.82 * state + 0.18 * (rng.gen::<f64>() * 2.0 - 1.0);
        *v = state;
    }
    let power = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let signal_power = power(&signal);
    let noise_power = power(&noise).max(f64::MIN_POSITIVE);
    let noise_gain = (signal_power / noise_power / 10f64.powf(SNR_DB / 10.0)).sqrt();

    let mut mix: Vec<f64> = signal
        .iter()
        .zip(&noise)
        .map(|(s, w)| s + noise_gain * w)
        .collect();
    let peak = mix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let gain = PEAK / peak;
        for v in mix.iter_mut() {
            *v *= gain;
        }
    }
    mix.into_iter().map(|v| v as f32).collect()
}

/// Generate a labeled corpus under `out_dir`: WAV clips in `clips/`,
/// plus `manifest.csv` with an 80/20 per-class train/test split (the
/// last fifth of each class's clips is test). Returns the manifest,
/// identical to what loading the written CSV yields.
pub fn gen_synthetic(out_dir: &Path, spec: &SynthSpec) -> Result<DatasetManifest, DataError> {
    spec.validate()?;
    let clips_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clips_dir).map_err(|source| DataError::Io {
        path: clips_dir.display().to_string(),
        source,
    })?;

    let n_test = (spec.clips_per_class as f64 * TEST_FRACTION).round() as usize;
    let n_train = spec.clips_per_class - n_test;

    let mut rows: Vec<(PathBuf, String, Split)> = Vec::new();
    let mut train_rows: Vec<usize> = Vec::new();
    for c in 0..spec.n_classes {
        for i in 0..spec.clips_per_class {
            let mut rng =
                ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, &[c as u64, i as u64]));
            let samples = render_clip(c, spec.n_classes, &mut rng);
            let rel = format!("clips/class{c:03}_clip{i:03}.wav");
            let path = out_dir.join(&rel);
            let clip = AudioClip::new(samples, CANONICAL_SAMPLE_RATE, rel.clone());
            write_wav_i16(&path, &clip)?;
            let split = if i < n_train { Split::Train } else { Split::Test };
            if split == Split::Train {
                train_rows.push(rows.len());
            }
            rows.push((path, format!("class{c:03}"), split));
        }
    }

    if spec.label_corruption > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, &[u64::MAX]));
        let n_corrupt = (spec.label_corruption * train_rows.len() as f64).round() as usize;
        train_rows.shuffle(&mut rng);
        for &row in train_rows.iter().take(n_corrupt) {
            let current: usize = rows[row].1[5..].parse().expect("class label format");
            let offset = rng.gen_range(1..spec.n_classes);
            let wrong = (current + offset) % spec.n_classes;
            rows[row].1 = format!("class{wrong:03}");
        }
    }

    let manifest_path = out_dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&manifest_path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => DataError::Io {
            path: manifest_path.display().to_string(),
            source,
        },
        other => DataError::Invalid(format!("cannot write manifest: {other:?}")),
    })?;
    let csv_err = |e: csv::Error| DataError::Invalid(format!("cannot write manifest: {e}"));
    writer
        .write_record(["path", "label", "split"])
        .map_err(csv_err)?;
    for (path, label, split) in &rows {
        let rel = path
            .strip_prefix(out_dir)
            .expect("rows are built under out_dir")
            .to_str()
            .expect("ascii file names");
        writer
            .write_record([rel, label, split.name()])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(|source| DataError::Io {
        path: manifest_path.display().to_string(),
        source,
    })?;

    DatasetManifest::from_rows(rows)
}
