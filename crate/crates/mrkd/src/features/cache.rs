//! On-disk feature cache: one small binary file per clip.
//!
//! Layout (little-endian, 32-byte header):
//!
//! | offset | size | field                        |
//! |--------|------|------------------------------|
//! | 0      | 4    | magic `MRKD`                 |
//! | 4      | 2    | format version, u16 = 1      |
//! | 6      | 1    | representation tag code      |
//! | 7      | 1    | reserved, 0                  |
//! | 8      | 1    | dtype code, 1 = f32          |
//! | 9      | 1    | ndim, 3                      |
//! | 10     | 12   | dims, 3 x u32 (c, t, f)      |
//! | 22     | 4    | hop_seconds, f32             |
//! | 26     | 6    | reserved, 0                  |
//!
//! followed by `c*t*f` row-major f32 values. Readers reject unknown
//! magic, versions, and truncated payloads.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{FeatureError, FeatureMap, RepresentationTag};

const MAGIC: &[u8; 4] = b"MRKD";
const VERSION: u16 = 1;
const DTYPE_F32: u8 = 1;
const HEADER_LEN: usize = 32;

fn io_err(path: &Path, source: std::io::Error) -> FeatureError {
    FeatureError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serialize a feature map. The write is atomic: a temp file in the same
/// directory is renamed over the target, so readers never observe a
/// partial file.
pub fn cache_write(fm: &FeatureMap, path: &Path) -> Result<(), FeatureError> {
    let mut buf = Vec::with_capacity(HEADER_LEN + fm.data().len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(fm.tag.code());
    buf.push(0);
    buf.push(DTYPE_F32);
    buf.push(3);
    for dim in [fm.channels(), fm.time(), fm.freq()] {
        let dim = u32::try_from(dim).map_err(|_| {
            FeatureError::Parameter(format!("dimension {dim} exceeds the u32 header field"))
        })?;
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    buf.extend_from_slice(&fm.hop_seconds.to_le_bytes());
    buf.extend_from_slice(&[0u8; 6]);
    debug_assert_eq!(buf.len(), HEADER_LEN);
    for v in fm.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }

    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        file.write_all(&buf).map_err(|e| io_err(&tmp, e))?;
        file.sync_all().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Deserialize a feature map. The clip id is recovered from the file
/// stem, which is how the data layer names cache entries.
pub fn cache_read(path: &Path) -> Result<FeatureMap, FeatureError> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut header = [0u8; HEADER_LEN];
    file.read_exact(&mut header)
        .map_err(|_| FeatureError::CorruptCache(format!("{}: truncated header", path.display())))?;

    if &header[0..4] != MAGIC {
        return Err(FeatureError::CorruptCache(format!(
            "{}: bad magic {:?}",
            path.display(),
            &header[0..4]
        )));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(FeatureError::CorruptCache(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let tag = RepresentationTag::from_code(header[6]).ok_or_else(|| {
        FeatureError::CorruptCache(format!(
            "{}: unknown representation code {}",
            path.display(),
            header[6]
        ))
    })?;
    if header[8] != DTYPE_F32 {
        return Err(FeatureError::CorruptCache(format!(
            "{}: unsupported dtype code {}",
            path.display(),
            header[8]
        )));
    }
    if header[9] != 3 {
        return Err(FeatureError::CorruptCache(format!(
            "{}: expected 3 dimensions, header says {}",
            path.display(),
            header[9]
        )));
    }
    let dim = |i: usize| {
        u32::from_le_bytes([header[10 + 4 * i], header[11 + 4 * i], header[12 + 4 * i], header[13 + 4 * i]])
            as usize
    };
    let (channels, time, freq) = (dim(0), dim(1), dim(2));
    let hop_seconds = f32::from_le_bytes([header[22], header[23], header[24], header[25]]);

    let count = channels
        .checked_mul(time)
        .and_then(|n| n.checked_mul(freq))
        .filter(|&n| n <= u32::MAX as usize)
        .ok_or_else(|| {
            FeatureError::CorruptCache(format!("{}: dimension overflow", path.display()))
        })?;
    let mut payload = vec![0u8; count * 4];
    file.read_exact(&mut payload).map_err(|_| {
        FeatureError::CorruptCache(format!(
            "{}: truncated payload, expected {} bytes",
            path.display(),
            count * 4
        ))
    })?;
    // trailing garbage means the file is not what the header claims
    let mut probe = [0u8; 1];
    if file.read(&mut probe).map_err(|e| io_err(path, e))? != 0 {
        return Err(FeatureError::CorruptCache(format!(
            "{}: trailing bytes after payload",
            path.display()
        )));
    }

    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let clip_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(FeatureMap::new(data, channels, time, freq, tag, hop_seconds, clip_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{extract, FeatureConfig};

    fn sample_map() -> FeatureMap {
        let clip = crate::audio::AudioClip::new(
            (0..66_150)
                .map(|n| ((n as f32 * 0.01).sin()) * 0.3)
                .collect(),
            44_100,
            "sample",
        );
        extract(
            &clip,
            &FeatureConfig::for_representation(RepresentationTag::LogMel64),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.mrkd");
        let fm = sample_map();
        cache_write(&fm, &path).unwrap();
        let back = cache_read(&path).unwrap();
        assert_eq!(back.tag, fm.tag);
        assert_eq!(back.channels(), fm.channels());
        assert_eq!(back.time(), fm.time());
        assert_eq!(back.freq(), fm.freq());
        assert_eq!(back.hop_seconds.to_bits(), fm.hop_seconds.to_bits());
        assert_eq!(back.clip_id, "sample");
        assert_eq!(back.data().len(), fm.data().len());
        for (a, b) in back.data().iter().zip(fm.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn file_size_is_header_plus_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sized.mrkd");
        let fm = sample_map();
        cache_write(&fm, &path).unwrap();
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(fm.channels() * fm.time() * fm.freq(), 3 * 143 * 64);
        assert_eq!(len, 32 + 3 * 143 * 64 * 4);
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mrkd");
        let fm = sample_map();
        cache_write(&fm, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            cache_read(&path),
            Err(FeatureError::CorruptCache(_))
        ));
    }

    #[test]
    fn unknown_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vers.mrkd");
        cache_write(&sample_map(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        let err = cache_read(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.mrkd");
        cache_write(&sample_map(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            cache_read(&path),
            Err(FeatureError::CorruptCache(_))
        ));
    }

    #[test]
    fn no_temp_file_left_behind() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clean.mrkd");
        cache_write(&sample_map(), &path).unwrap();
        let entries: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(entries, vec!["clean.mrkd".to_string()]);
    }
}
