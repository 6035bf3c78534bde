//! Training-set standardization statistics.
//!
//! Mean and standard deviation per (channel, frequency bin), accumulated
//! over every frame of the training split, then applied to all splits.
//! Stored next to the cache as JSON so a run can be resumed or audited.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureMap, RepresentationTag};

/// Standard deviations below this are treated as constant bins; their
/// standardized value is 0 instead of a blow-up.
const STD_FLOOR: f64 = 1e-8;

/// Per-(channel, bin) mean and standard deviation for one representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub tag: RepresentationTag,
    pub channels: usize,
    pub freq: usize,
    /// Frames the statistics were fitted on.
    pub frames: u64,
    /// Row-major channels x freq.
    pub mean: Vec<f64>,
    /// Row-major channels x freq, floored at 1e-8.
    pub std: Vec<f64>,
}

/// Streaming accumulator so stats can be fitted one cached map at a time.
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    tag: RepresentationTag,
    channels: usize,
    freq: usize,
    frames: u64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(tag: RepresentationTag, channels: usize, freq: usize) -> Self {
        Self {
            tag,
            channels,
            freq,
            frames: 0,
            sum: vec![0.0; channels * freq],
            sum_sq: vec![0.0; channels * freq],
        }
    }

    pub fn push(&mut self, fm: &FeatureMap) -> Result<(), FeatureError> {
        if fm.tag != self.tag || fm.channels() != self.channels || fm.freq() != self.freq {
            return Err(FeatureError::InvalidInput(format!(
                "map {} is {} {}x{}x{}, accumulator wants {} {}x?x{}",
                fm.clip_id,
                fm.tag,
                fm.channels(),
                fm.time(),
                fm.freq(),
                self.tag,
                self.channels,
                self.freq
            )));
        }
        for c in 0..self.channels {
            let plane = fm.channel(c);
            for t in 0..fm.time() {
                let row = &plane[t * self.freq..(t + 1) * self.freq];
                for (f, &v) in row.iter().enumerate() {
                    let v = v as f64;
                    self.sum[c * self.freq + f] += v;
                    self.sum_sq[c * self.freq + f] += v * v;
                }
            }
        }
        self.frames += fm.time() as u64;
        Ok(())
    }

    pub fn finish(self) -> Result<FeatureStats, FeatureError> {
        if self.frames == 0 {
            return Err(FeatureError::InvalidInput(
                "cannot fit statistics on zero frames".into(),
            ));
        }
        let n = self.frames as f64;
        let mean: Vec<f64> = self.sum.iter().map(|&s| s / n).collect();
        let std: Vec<f64> = self
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(&sq, &m)| (sq / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Ok(FeatureStats {
            tag: self.tag,
            channels: self.channels,
            freq: self.freq,
            frames: self.frames,
            mean,
            std,
        })
    }
}

impl FeatureStats {
    /// Fit over a slice of maps that must share tag and shape.
    pub fn fit(maps: &[FeatureMap]) -> Result<Self, FeatureError> {
        let first = maps.first().ok_or_else(|| {
            FeatureError::InvalidInput("cannot fit statistics on an empty set".into())
        })?;
        let mut acc = StatsAccumulator::new(first.tag, first.channels(), first.freq());
        for fm in maps {
            acc.push(fm)?;
        }
        acc.finish()
    }

    /// Standardize a map in place: `(x - mean) / std` per (channel, bin).
    pub fn apply(&self, fm: &mut FeatureMap) -> Result<(), FeatureError> {
        if fm.tag != self.tag || fm.channels() != self.channels || fm.freq() != self.freq {
            return Err(FeatureError::InvalidInput(format!(
                "map {} does not match the fitted statistics ({} vs {})",
                fm.clip_id, fm.tag, self.tag
            )));
        }
        let time = fm.time();
        let freq = self.freq;
        let data = fm.data_mut();
        for c in 0..self.channels {
            for t in 0..time {
                let base = (c * time + t) * freq;
                for f in 0..freq {
                    let idx = c * freq + f;
                    let v = data[base + f] as f64;
                    data[base + f] = ((v - self.mean[idx]) / self.std[idx]) as f32;
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| FeatureError::InvalidInput(format!("stats serialization: {e}")))?;
        fs::write(path, json).map_err(|e| FeatureError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let json = fs::read_to_string(path).map_err(|e| FeatureError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&json).map_err(|e| {
            FeatureError::CorruptCache(format!("{}: bad stats file: {e}", path.display()))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_of(value: f32, id: &str) -> FeatureMap {
        FeatureMap::new(
            vec![value; 3 * 10 * 4],
            3,
            10,
            4,
            RepresentationTag::LogMel64,
            0.01,
            id,
        )
    }

    #[test]
    fn two_constant_maps_give_midpoint_mean_unit_std() {
        let stats = FeatureStats::fit(&[map_of(1.0, "a"), map_of(3.0, "b")]).unwrap();
        assert_eq!(stats.frames, 20);
        for &m in &stats.mean {
            assert!((m - 2.0).abs() < 1e-12);
        }
        for &s in &stats.std {
            assert!((s - 1.0).abs() < 1e-12);
        }
        let mut fm = map_of(1.0, "a");
        stats.apply(&mut fm).unwrap();
        for &v in fm.data() {
            assert!((v + 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_bin_standardizes_to_zero() {
        let stats = FeatureStats::fit(&[map_of(5.0, "a")]).unwrap();
        let mut fm = map_of(5.0, "a");
        stats.apply(&mut fm).unwrap();
        for &v in fm.data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn standardized_set_has_zero_mean_unit_variance() {
        let maps: Vec<FeatureMap> = (0..8)
            .map(|i| {
                let data: Vec<f32> = (0..3 * 10 * 4)
                    .map(|j| {
                        let h = (j * 31 + i * 977) % 997;
                        h as f32 / 100.0 - 5.0 + (j % 4) as f32 * 2.0
                    })
                    .collect();
                FeatureMap::new(data, 3, 10, 4, RepresentationTag::LogMel64, 0.01, "m")
            })
            .collect();
        let stats = FeatureStats::fit(&maps).unwrap();
        let standardized: Vec<FeatureMap> = maps
            .iter()
            .map(|fm| {
                let mut fm = fm.clone();
                stats.apply(&mut fm).unwrap();
                fm
            })
            .collect();
        let refit = FeatureStats::fit(&standardized).unwrap();
        for &m in &refit.mean {
            assert!(m.abs() < 1e-4, "mean {m}");
        }
        for &s in &refit.std {
            assert!((s - 1.0).abs() < 1e-4, "std {s}");
        }
    }

    #[test]
    fn mismatched_map_rejected() {
        let stats = FeatureStats::fit(&[map_of(1.0, "a")]).unwrap();
        let mut other = FeatureMap::new(
            vec![0.0; 10 * 4],
            1,
            10,
            4,
            RepresentationTag::Cqt,
            0.01,
            "c",
        );
        assert!(stats.apply(&mut other).is_err());
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.json");
        let stats = FeatureStats::fit(&[map_of(1.0, "a"), map_of(2.5, "b")]).unwrap();
        stats.save(&path).unwrap();
        let back = FeatureStats::load(&path).unwrap();
        assert_eq!(stats, back);
    }

    #[test]
    fn empty_set_rejected() {
        assert!(FeatureStats::fit(&[]).is_err());
    }
}
