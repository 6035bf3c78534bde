//! Minimal RIFF/WAVE reader and writer for 16-bit integer PCM.
//!
//! Accepts format tag 1 (PCM), bit depth 16, 1 or 2 channels; all
//! multi-byte fields little-endian. Stereo is mixed to mono by averaging
//! the channels per sample frame.

use std::fs;
use std::path::Path;

use super::{AudioClip, AudioError};

const FORMAT_PCM: u16 = 1;

fn read_u16(bytes: &[u8], at: usize) -> Option<u16> {
    Some(u16::from_le_bytes(bytes.get(at..at + 2)?.try_into().ok()?))
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    Some(u32::from_le_bytes(bytes.get(at..at + 4)?.try_into().ok()?))
}

/// Decode a 16-bit PCM WAV file into a normalized mono clip.
///
/// Integer samples map to [-1, 1] by division with 32768; the sample rate
/// comes from the `fmt ` chunk. The clip's `source_id` is the file path.
pub fn load_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let bytes = fs::read(path).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let clip = decode_wav(&bytes, &path.display().to_string())?;
    Ok(clip)
}

/// Decode WAV bytes. Split from [`load_wav`] so tests can feed buffers.
pub(crate) fn decode_wav(bytes: &[u8], source_id: &str) -> Result<AudioClip, AudioError> {
    let malformed = |msg: &str| AudioError::MalformedWav(format!("{source_id}: {msg}"));
    if bytes.len() < 12 {
        return Err(malformed("file shorter than RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(malformed("missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing WAVE tag"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let chunk_id = &bytes[pos..pos + 4];
        let chunk_len = read_u32(bytes, pos + 4).ok_or_else(|| malformed("truncated chunk"))? as usize;
        let body_start = pos + 8;
        let body_end = body_start + chunk_len;
        if body_end > bytes.len() {
            return Err(malformed("chunk extends past end of file"));
        }
        match chunk_id {
            b"fmt " => {
                if chunk_len < 16 {
                    return Err(malformed("fmt chunk shorter than 16 bytes"));
                }
                let format = read_u16(bytes, body_start).unwrap();
                let channels = read_u16(bytes, body_start + 2).unwrap();
                let rate = read_u32(bytes, body_start + 4).unwrap();
                let bits = read_u16(bytes, body_start + 14).unwrap();
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => {
                data = Some(&bytes[body_start..body_end]);
            }
            _ => {} // skip LIST, fact, etc.
        }
        // chunks are word-aligned
        pos = body_end + (chunk_len & 1);
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| malformed("no fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("no data chunk"))?;

    if format != FORMAT_PCM {
        return Err(AudioError::UnsupportedFormat {
            field: "format_tag",
            value: format as u32,
        });
    }
    if bits != 16 {
        return Err(AudioError::UnsupportedFormat {
            field: "bits_per_sample",
            value: bits as u32,
        });
    }
    if channels == 0 || channels > 2 {
        return Err(AudioError::UnsupportedFormat {
            field: "channels",
            value: channels as u32,
        });
    }
    if rate == 0 {
        return Err(malformed("zero sample rate"));
    }

    let bytes_per_frame = 2 * channels as usize;
    let n_frames = data.len() / bytes_per_frame;
    let mut samples = Vec::with_capacity(n_frames);
    for frame in 0..n_frames {
        let at = frame * bytes_per_frame;
        let mut acc = 0.0f32;
        for ch in 0..channels as usize {
            let v = i16::from_le_bytes([data[at + 2 * ch], data[at + 2 * ch + 1]]);
            acc += v as f32 / 32768.0;
        }
        samples.push(acc / channels as f32);
    }
    Ok(AudioClip::new(samples, rate, source_id))
}

/// Write a mono clip as 16-bit PCM WAV. Samples are clamped to [-1, 1]
/// and quantized with round-to-nearest.
pub fn write_wav_i16(path: &Path, clip: &AudioClip) -> Result<(), AudioError> {
    let bytes = encode_wav(clip);
    fs::write(path, bytes).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let n = clip.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
