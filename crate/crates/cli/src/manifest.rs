//! Dataset manifest: a `path,label,id` CSV with paths relative to the
//! manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub path: PathBuf,
    pub label: String,
    pub id: String,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<Entry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, root)?;
        for e in &m.entries {
            let p = m.resolve(e);
            if !p.is_file() {
                bail!("manifest entry {:?}: mesh file {} does not exist", e.id, p.display());
            }
        }
        Ok(m)
    }

    pub fn parse(text: &str, root: PathBuf) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let entries = reader
            .deserialize()
            .enumerate()
            .map(|(i, r)| r.with_context(|| format!("manifest row {}", i + 2)))
            .collect::<Result<Vec<Entry>>>()?;
        let mut seen = HashSet::new();
        for e in &entries {
            if e.id.is_empty() || e.id.contains(['/', '\\']) || e.id == "." || e.id == ".." {
                bail!("shape id {:?} is not usable as a file name", e.id);
            }
            if !seen.insert(&e.id) {
                bail!("duplicate shape id {:?}", e.id);
            }
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &entries {
            *counts.entry(&e.label).or_default() += 1;
        }
        if let Some((label, _)) = counts.iter().find(|(_, &c)| c < 2) {
            bail!("class {label:?} has a single shape; every class needs at least two");
        }
        Ok(Manifest { root, entries })
    }

    pub fn resolve(&self, e: &Entry) -> PathBuf {
        self.root.join(&e.path)
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.label.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Serializes entries as manifest CSV.
pub fn to_csv(entries: &[Entry]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in entries {
        w.serialize(e)?;
    }
    Ok(w.into_inner()?)
}
