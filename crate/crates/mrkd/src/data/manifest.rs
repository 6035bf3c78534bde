//! CSV manifest loading: rows of `path,label[,split]`.

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Absolute or manifest-relative path, already resolved.
    pub path: PathBuf,
    /// Dense class index into `DatasetManifest::class_names`.
    pub label: usize,
    pub split: Split,
}

/// A dataset description: one entry per clip, labels as dense indices
/// ordered by sorted class name. Entry order is the manifest row order
/// and is the canonical ordering for anything indexed per clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    class_names: Vec<String>,
}

impl DatasetManifest {
    /// Build from raw rows. Class names are collected, sorted, and mapped
    /// to dense indices; duplicate paths are rejected.
    pub fn from_rows(rows: Vec<(PathBuf, String, Split)>) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Invalid("manifest has no data rows".into()));
        }
        let names: BTreeSet<&str> = rows.iter().map(|(_, l, _)| l.as_str()).collect();
        let class_names: Vec<String> = names.into_iter().map(String::from).collect();
        let index: HashMap<&str, usize> = class_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();

        let mut seen: HashMap<&Path, usize> = HashMap::new();
        for (row, (path, _, _)) in rows.iter().enumerate() {
            if let Some(first) = seen.insert(path.as_path(), row) {
                return Err(DataError::Invalid(format!(
                    "duplicate path {} (rows {} and {})",
                    path.display(),
                    first + 2,
                    row + 2
                )));
            }
        }

        let entries = rows
            .into_iter()
            .map(|(path, label, split)| ManifestEntry {
                path,
                label: index[label.as_str()],
                split,
            })
            .collect();
        Ok(DatasetManifest {
            entries,
            class_names,
        })
    }

    /// Load a CSV manifest. Relative clip paths resolve against the
    /// manifest's directory. A missing `split` column marks every row
    /// as train.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let io_err = |source| DataError::Io {
            path: path.display().to_string(),
            source,
        };
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(source) => io_err(source),
                other => DataError::Invalid(format!("unreadable manifest: {other:?}")),
            })?;

        let headers = reader
            .headers()
            .map_err(|e| DataError::Manifest {
                row: 1,
                detail: format!("unreadable header: {e}"),
            })?
            .clone();
        let header_fields: Vec<&str> = headers.iter().map(str::trim).collect();
        let has_split = match header_fields.as_slice() {
            ["path", "label"] => false,
            ["path", "label", "split"] => true,
            other => {
                return Err(DataError::Manifest {
                    row: 1,
                    detail: format!("expected header path,label[,split], found {other:?}"),
                })
            }
        };

        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            // Row numbers are 1-based file lines; the header is line 1.
            let row = i + 2;
            let record = record.map_err(|e| DataError::Manifest {
                row,
                detail: format!("unreadable row: {e}"),
            })?;
            let field = |idx: usize| record.get(idx).unwrap_or("").trim().to_string();
            let raw_path = field(0);
            if raw_path.is_empty() {
                return Err(DataError::Manifest {
                    row,
                    detail: "empty path".into(),
                });
            }
            let label = field(1);
            if label.is_empty() {
                return Err(DataError::Manifest {
                    row,
                    detail: "empty label".into(),
                });
            }
            let split = if has_split {
                let tag = field(2);
                Split::parse(&tag).ok_or_else(|| DataError::Manifest {
                    row,
                    detail: format!("unknown split tag {tag:?} (expected train or test)"),
                })?
            } else {
                Split::Train
            };
            let clip = PathBuf::from(&raw_path);
            let clip = if clip.is_absolute() {
                clip
            } else {
                base.join(clip)
            };
            rows.push((clip, label, split));
        }
        Self::from_rows(rows)
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Row indices belonging to a split, in manifest order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Like `split_indices` but rejects an empty split, for callers that
    /// are about to train or evaluate on it.
    pub fn require_split(&self, split: Split) -> Result<Vec<usize>, DataError> {
        let ids = self.split_indices(split);
        if ids.is_empty() {
            return Err(DataError::Invalid(format!(
                "split {split} is referenced but contains no rows"
            )));
        }
        Ok(ids)
    }
}
