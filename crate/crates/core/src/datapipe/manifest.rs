//! Dataset manifests: CSV with header `sample_id,identity,camera,split,path`.
//! Payload paths are resolved relative to the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub sample_id: String,
    pub identity: i64,
    pub camera: i64,
    pub split: Split,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub records: Vec<Record>,
    /// Directory that relative payload paths are resolved against.
    pub root: PathBuf,
}

impl Manifest {
    /// Validates unique sample ids and at least two samples per train identity.
    pub fn new(records: Vec<Record>, root: impl Into<PathBuf>) -> Result<Self> {
        let mut ids = HashSet::new();
        for r in &records {
            if !ids.insert(r.sample_id.as_str()) {
                return Err(Error::Data(format!("duplicate sample_id {}", r.sample_id)));
            }
        }
        let m = Manifest {
            records,
            root: root.into(),
        };
        if let Some((id, rows)) = m.identity_groups(Split::Train).into_iter().find(|(_, v)| v.len() < 2) {
            return Err(Error::Data(format!(
                "train identity {id} has {} sample(s); triplet batching needs at least 2",
                rows.len()
            )));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let header = reader.headers().map_err(|e| Error::format(path, e.to_string()))?;
        if header != vec!["sample_id", "identity", "camera", "split", "path"] {
            return Err(Error::format(
                path,
                "header must be sample_id,identity,camera,split,path",
            ));
        }
        let records = reader
            .deserialize()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| Error::format(path, format!("row {}: {e}", i + 2))))
            .collect::<Result<Vec<Record>>>()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::new(records, root)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &Record)> {
        self.records.iter().enumerate().filter(move |(_, r)| r.split == split)
    }

    /// Record indices per identity within one split, identities ascending.
    pub fn identity_groups(&self, split: Split) -> BTreeMap<i64, Vec<usize>> {
        let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.split(split) {
            groups.entry(r.identity).or_default().push(i);
        }
        groups
    }

    pub fn payload_path(&self, record: &Record) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn index_of(&self, sample_id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.sample_id == sample_id)
    }
}
