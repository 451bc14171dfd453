//! On-disk speaker catalog: a JSON list of entries pointing at SPKE files.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use rtvc_core::speaker::SpeakerEmbedding;
use rtvc_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub display_name: String,
    /// Relative paths resolve against the catalog file's directory.
    pub embedding: PathBuf,
    pub m_tgt: f64,
}

/// What `GET /speakers` returns per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerInfo {
    pub id: String,
    pub display_name: String,
    pub m_tgt: f64,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    speakers: IndexMap<String, (CatalogEntry, SpeakerEmbedding)>,
    path: Option<PathBuf>,
}

impl Catalog {
    /// Build from loaded entries; ids must be unique and there must be at
    /// least one.
    pub fn from_entries(entries: Vec<(CatalogEntry, SpeakerEmbedding)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Validation("speaker catalog is empty".into()));
        }
        let mut c = Self { speakers: IndexMap::new(), path: None };
        for (entry, emb) in entries {
            c.insert(entry, emb)?;
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let entries: Vec<CatalogEntry> = serde_json::from_slice(&std::fs::read(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let loaded = entries
            .into_iter()
            .map(|e| {
                let emb = SpeakerEmbedding::load(base.join(&e.embedding))?;
                Ok((e, emb))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut c = Self::from_entries(loaded)?;
        c.path = Some(path.to_path_buf());
        Ok(c)
    }

    /// Rewrite the catalog file it was loaded from, if any.
    pub fn persist(&self) -> Result<()> {
        if let Some(path) = &self.path {
            let entries: Vec<&CatalogEntry> = self.speakers.values().map(|(e, _)| e).collect();
            std::fs::write(path, serde_json::to_vec_pretty(&entries)?)?;
        }
        Ok(())
    }

    /// Directory new embedding files go to.
    pub fn dir(&self) -> Option<&Path> {
        self.path.as_deref().and_then(Path::parent)
    }

    pub fn insert(&mut self, entry: CatalogEntry, embedding: SpeakerEmbedding) -> Result<()> {
        if !(entry.m_tgt > 0.0) || !entry.m_tgt.is_finite() {
            return Err(Error::Validation(format!("speaker {} has median {}", entry.id, entry.m_tgt)));
        }
        if self.speakers.contains_key(&entry.id) {
            return Err(Error::Validation(format!("duplicate speaker id {}", entry.id)));
        }
        self.speakers.insert(entry.id.clone(), (entry, embedding));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<(&SpeakerEmbedding, f64)> {
        self.speakers.get(id).map(|(e, emb)| (emb, e.m_tgt))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.speakers.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn list(&self) -> Vec<SpeakerInfo> {
        self.speakers
            .values()
            .map(|(e, _)| SpeakerInfo { id: e.id.clone(), display_name: e.display_name.clone(), m_tgt: e.m_tgt })
            .collect()
    }
}
