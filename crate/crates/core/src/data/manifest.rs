use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::RecordTable;
use crate::registry::Registry;

pub const MANIFEST_COLUMNS: [&str; 3] = ["path", "abbreviation", "split"];

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    /// As written in the manifest; relative paths resolve against the root.
    pub path: PathBuf,
    pub class_id: usize,
    pub split: Split,
}

/// What to do when a manifest names a file that does not exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingFilePolicy {
    /// Log and drop the record.
    Warn,
    #[default]
    Fail,
    /// Do not touch the filesystem.
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<SampleRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if r.path.as_os_str().is_empty() {
                return Err(Error::Config("record with empty path".into()));
            }
            if !seen.insert((r.path.clone(), r.split)) {
                return Err(Error::Config(format!(
                    "duplicate record {} in split {}",
                    r.path.display(),
                    r.split
                )));
            }
        }
        Ok(Self {
            root: root.into(),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, record: &SampleRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.root.join(&record.path)
        }
    }

    /// Indices into `records` belonging to `split`, in manifest order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn class_counts(&self, split: Option<Split>) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            if split.is_none_or(|s| s == r.split) {
                *counts.entry(r.class_id).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn find(&self, path: &Path) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.path == path)
    }

    pub fn to_table(&self, registry: &Registry) -> Result<RecordTable> {
        self.table_with_root(registry, &self.root)
    }

    fn table_with_root(&self, registry: &Registry, root: &Path) -> Result<RecordTable> {
        let mut table = RecordTable::new(&MANIFEST_COLUMNS).with_directive("root", root.to_string_lossy().into_owned());
        for r in &self.records {
            table.push(vec![
                r.path.to_string_lossy().into_owned(),
                registry.get(r.class_id)?.abbreviation.clone(),
                r.split.to_string(),
            ]);
        }
        Ok(table)
    }

    /// Writes the manifest with its root expressed relative to the file's
    /// directory when it is that directory, absolute otherwise.
    pub fn save(&self, path: &Path, registry: &Registry) -> Result<()> {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let root = if std::path::absolute(&self.root)? == std::path::absolute(dir)? {
            PathBuf::from(".")
        } else {
            std::path::absolute(&self.root)?
        };
        self.table_with_root(registry, &root)?.write_path(path)
    }
}

/// Parses a manifest file; the root defaults to the file's directory and a
/// relative `# root:` directive resolves against that directory.
pub fn load_manifest(path: &Path, registry: &Registry, missing: MissingFilePolicy) -> Result<DatasetManifest> {
    let table = RecordTable::read_path(path)?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let root = match table.directive("root") {
        Some(dir) if Path::new(dir).is_absolute() => PathBuf::from(dir),
        Some(dir) => base.join(dir),
        None => base,
    };
    let path_col = table.column("path", path)?;
    let abbr_col = table.column("abbreviation", path)?;
    let split_col = table.column("split", path)?;

    let mut records = Vec::with_capacity(table.rows.len());
    let mut seen = HashSet::new();
    for row in &table.rows {
        let rel = row.fields[path_col].trim();
        if rel.is_empty() {
            return Err(Error::parse(path, row.line, "empty path"));
        }
        let class = registry
            .by_abbreviation(row.fields[abbr_col].trim())
            .map_err(|_| Error::parse(path, row.line, format!("unknown class {:?}", row.fields[abbr_col])))?;
        let split = row.fields[split_col]
            .parse::<Split>()
            .map_err(|e| Error::parse(path, row.line, e.to_string()))?;
        let record = SampleRecord {
            path: PathBuf::from(rel),
            class_id: class.class_id,
            split,
        };
        if !seen.insert((record.path.clone(), split)) {
            return Err(Error::parse(
                path,
                row.line,
                format!("duplicate record {rel} in split {split}"),
            ));
        }
        if missing != MissingFilePolicy::Ignore {
            let full = if record.path.is_absolute() {
                record.path.clone()
            } else {
                root.join(&record.path)
            };
            if !full.is_file() {
                match missing {
                    MissingFilePolicy::Fail => return Err(Error::MissingFile(full)),
                    _ => {
                        log::warn!("{}:{}: missing image {}", path.display(), row.line, full.display());
                        continue;
                    }
                }
            }
        }
        records.push(record);
    }
    Ok(DatasetManifest { root, records })
}

/// True for `.png`, `.jpg` and `.jpeg` files (any case).
pub fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Builds a manifest from `root/<abbreviation>/*.{png,jpg,jpeg}`.
pub fn scan_directory(root: &Path, registry: &Registry, split: Split) -> Result<DatasetManifest> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            dirs.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    dirs.sort();

    let unmatched: Vec<String> = dirs
        .iter()
        .filter(|d| registry.by_abbreviation(d).is_err())
        .cloned()
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::UnmatchedDirectories {
            root: root.to_path_buf(),
            names: unmatched,
        });
    }

    let mut records = Vec::new();
    for dir in &dirs {
        let class_id = registry.by_abbreviation(dir)?.class_id;
        let mut files = Vec::new();
        for entry in std::fs::read_dir(root.join(dir))? {
            let entry = entry?;
            let p = entry.path();
            if entry.file_type()?.is_file() && is_image(&p) {
                files.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        files.sort();
        records.extend(files.into_iter().map(|f| SampleRecord {
            path: Path::new(dir).join(f),
            class_id,
            split,
        }));
    }
    if records.is_empty() {
        log::warn!("no images found under {}", root.display());
    }
    DatasetManifest::new(root, records)
}
