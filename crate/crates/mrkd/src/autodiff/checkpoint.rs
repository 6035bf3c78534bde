//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!   magic "MRKP" | version u16 | entry count u32 | entries...
//! Each entry:
//!   name len u16 | name bytes (UTF-8) | ndim u8 | dims u32 x ndim |
//!   payload f32 x product(dims)
//!
//! The optimizer epoch rides along as a reserved scalar entry named
//! "optimizer.epoch". Files are written to a sibling temp path and
//! renamed, so a crash never leaves a half-written checkpoint behind.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::tensor::Tensor;
use super::AutodiffError;

const MAGIC: &[u8; 4] = b"MRKP";
const VERSION: u16 = 1;
const EPOCH_ENTRY: &str = "optimizer.epoch";
const MAX_NDIM: usize = 8;

fn io_err(path: &Path, source: std::io::Error) -> AutodiffError {
    AutodiffError::Io { path: path.display().to_string(), source }
}

fn encode_entry(buf: &mut Vec<u8>, name: &str, tensor: &Tensor<f32>) -> Result<(), AutodiffError> {
    let name_bytes = name.as_bytes();
    if name_bytes.len() > u16::MAX as usize {
        return Err(AutodiffError::Checkpoint(format!(
            "entry name of {} bytes is too long",
            name_bytes.len()
        )));
    }
    if tensor.shape().len() > MAX_NDIM {
        return Err(AutodiffError::Checkpoint(format!(
            "entry {name} has {} dimensions, the format allows {MAX_NDIM}",
            tensor.shape().len()
        )));
    }
    for &d in tensor.shape() {
        if d > u32::MAX as usize {
            return Err(AutodiffError::Checkpoint(format!(
                "entry {name} has a dimension of {d} that does not fit in 32 bits"
            )));
        }
    }
    buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
    buf.extend_from_slice(name_bytes);
    buf.push(tensor.shape().len() as u8);
    for &d in tensor.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Serialize named tensors plus the optimizer epoch, atomically.
pub fn save_checkpoint(
    path: &Path,
    entries: &[(String, Tensor<f32>)],
    epoch: u32,
) -> Result<(), AutodiffError> {
    let total = entries.len().checked_add(1).and_then(|n| u32::try_from(n).ok()).ok_or_else(
        || AutodiffError::Checkpoint("too many entries for the format".into()),
    )?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&total.to_le_bytes());
    for (name, tensor) in entries {
        if name == EPOCH_ENTRY {
            return Err(AutodiffError::Checkpoint(format!(
                "entry name {EPOCH_ENTRY} is reserved"
            )));
        }
        encode_entry(&mut buf, name, tensor)?;
    }
    encode_entry(&mut buf, EPOCH_ENTRY, &Tensor::new(vec![1], vec![epoch as f32])?)?;

    let file_name = path
        .file_name()
        .ok_or_else(|| AutodiffError::Checkpoint(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!("{}.tmp", file_name.to_string_lossy()));
    let mut file = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    file.write_all(&buf).map_err(|e| io_err(&tmp, e))?;
    file.sync_all().map_err(|e| io_err(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], AutodiffError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            AutodiffError::Checkpoint(format!(
                "file truncated while reading {what} at byte {}",
                self.pos
            ))
        })?;
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16, AutodiffError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32, AutodiffError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Read back named tensors and the optimizer epoch.
pub fn load_checkpoint(path: &Path) -> Result<(Vec<(String, Tensor<f32>)>, u32), AutodiffError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(AutodiffError::Checkpoint(format!(
            "{} is not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(AutodiffError::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let count = r.u32("entry count")?;

    let mut entries = Vec::with_capacity(count as usize);
    let mut epoch: Option<u32> = None;
    for i in 0..count {
        let name_len = r.u16("entry name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "entry name")?)
            .map_err(|_| {
                AutodiffError::Checkpoint(format!("entry {i} has a non-UTF-8 name"))
            })?
            .to_owned();
        let ndim = r.take(1, "rank")?[0] as usize;
        if ndim > MAX_NDIM {
            return Err(AutodiffError::Checkpoint(format!(
                "entry {name} claims {ndim} dimensions, the format allows {MAX_NDIM}"
            )));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut len: usize = 1;
        for _ in 0..ndim {
            let d = r.u32("dimension")? as usize;
            len = len
                .checked_mul(d)
                .filter(|&n| n <= u32::MAX as usize)
                .ok_or_else(|| {
                    AutodiffError::Checkpoint(format!("entry {name} has an oversized shape"))
                })?;
            shape.push(d);
        }
        let payload = r.take(len * 4, "payload")?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if !data.iter().all(|v| v.is_finite()) {
            return Err(AutodiffError::Checkpoint(format!(
                "entry {name} contains non-finite values"
            )));
        }
        if name == EPOCH_ENTRY {
            if data.len() != 1 {
                return Err(AutodiffError::Checkpoint(format!(
                    "{EPOCH_ENTRY} must hold exactly one value"
                )));
            }
            epoch = Some(data[0] as u32);
        } else {
            entries.push((name, Tensor::new(shape, data)?));
        }
    }
    if r.pos != bytes.len() {
        return Err(AutodiffError::Checkpoint(format!(
            "{} trailing bytes after the last entry",
            bytes.len() - r.pos
        )));
    }
    let epoch = epoch.ok_or_else(|| {
        AutodiffError::Checkpoint(format!("checkpoint is missing the {EPOCH_ENTRY} entry"))
    })?;
    Ok((entries, epoch))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_entries() -> Vec<(String, Tensor<f32>)> {
        vec![
            (
                "stem.conv.weight".into(),
                Tensor::new(vec![1, 1, 2, 2], vec![0.5, -1.25, 3.0e-40, f32::MAX]).unwrap(),
            ),
            ("head.bias".into(), Tensor::new(vec![3], vec![0.0, -0.0, 42.0]).unwrap()),
            ("stage0.bn.running_var".into(), Tensor::new(vec![2], vec![1.0, 0.9]).unwrap()),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let entries = sample_entries();
        save_checkpoint(&path, &entries, 17).unwrap();
        let (loaded, epoch) = load_checkpoint(&path).unwrap();
        assert_eq!(epoch, 17);
        assert_eq!(loaded.len(), entries.len());
        for ((name_a, t_a), (name_b, t_b)) in entries.iter().zip(&loaded) {
            assert_eq!(name_a, name_b);
            assert_eq!(t_a.shape(), t_b.shape());
            for (x, y) in t_a.data().iter().zip(t_b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // only the final file remains
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["model.ckpt".to_string()]);
    }

    #[test]
    fn empty_parameter_list_still_round_trips_the_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ckpt");
        save_checkpoint(&path, &[], 0).unwrap();
        let (entries, epoch) = load_checkpoint(&path).unwrap();
        assert!(entries.is_empty());
        assert_eq!(epoch, 0);
    }

    #[test]
    fn corrupted_files_are_rejected_with_reasons() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &sample_entries(), 3).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        fs::write(&path, &bad_magic).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        fs::write(&path, &bad_version).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");

        fs::write(&path, &good[..good.len() - 3]).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        let mut trailing = good.clone();
        trailing.extend_from_slice(&[0, 1, 2]);
        fs::write(&path, &trailing).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("trailing"), "{err}");
    }

    #[test]
    fn reserved_entry_name_cannot_be_saved() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let entries = vec![("optimizer.epoch".to_string(), Tensor::zeros(vec![1]))];
        let err = save_checkpoint(&path, &entries, 0).unwrap_err();
        assert!(matches!(err, AutodiffError::Checkpoint(_)));
    }

    #[test]
    fn missing_file_reports_its_path() {
        let err = load_checkpoint(Path::new("/nonexistent/model.ckpt")).unwrap_err();
        match err {
            AutodiffError::Io { path, .. } => {
                assert_eq!(path, "/nonexistent/model.ckpt");
            }
            other => panic!("expected io error, got {other}"),
        }
    }
}
