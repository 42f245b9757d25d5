//! Object catalogs and the disjoint train/val object split.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{load_mesh, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub object_id: String,
    pub mesh: Arc<Mesh>,
    pub split: Option<Split>,
}

/// One record of the catalog manifest JSON (a top-level array of these).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub object_id: String,
    /// OBJ path, relative to the manifest's directory.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Unit conversion applied before extent normalization (e.g. 0.001 for mm).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectCatalog {
    entries: Vec<CatalogEntry>,
}

impl ObjectCatalog {
    pub fn new(entries: Vec<CatalogEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.object_id.as_str()) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate object_id `{}`",
                    e.object_id
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_meshes(meshes: impl IntoIterator<Item = Mesh>) -> Result<Self> {
        Self::new(
            meshes
                .into_iter()
                .map(|m| CatalogEntry {
                    object_id: m.object_id().to_owned(),
                    mesh: Arc::new(m),
                    split: None,
                })
                .collect(),
        )
    }

    /// Loads every OBJ listed in a catalog manifest and normalizes each
    /// mesh's largest extent into `extent_range`.
    pub fn from_manifest(path: &Path, extent_range: (f64, f64)) -> Result<Self> {
        let records: Vec<ManifestRecord> = serde_json::from_slice(&fs::read(path)?)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let entries = records
            .into_iter()
            .map(|r| {
                let mut mesh = load_mesh(&dir.join(&r.path), &r.object_id)?;
                if let Some(s) = r.scale {
                    mesh = mesh.scaled(s)?;
                }
                let mesh = mesh.normalize_extent(extent_range.0, extent_range.1)?;
                Ok(CatalogEntry {
                    object_id: r.object_id,
                    mesh: Arc::new(mesh),
                    split: r.split,
                })
            })
            .collect::<Result<_>>()?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_fully_split(&self) -> bool {
        self.entries.iter().all(|e| e.split.is_some())
    }

    pub fn of_split(&self, split: Split) -> Vec<&CatalogEntry> {
        self.entries
            .iter()
            .filter(|e| e.split == Some(split))
            .collect()
    }
}

/// Tags `floor(N/5)` entries as val and the rest as train. The val subset
/// is a seeded shuffle of the entries ordered by object_id, so the result
/// does not depend on manifest order.
pub fn split_catalog(catalog: &ObjectCatalog, seed: u64) -> Result<ObjectCatalog> {
    let n = catalog.len();
    if n < 5 {
        return Err(Error::TooFewObjects(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| catalog.entries[a].object_id.cmp(&catalog.entries[b].object_id));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val: HashSet<usize> = order[..n / 5].iter().copied().collect();
    let entries = catalog
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| CatalogEntry {
            split: Some(if val.contains(&i) { Split::Val } else { Split::Train }),
            ..e.clone()
        })
        .collect();
    Ok(ObjectCatalog { entries })
}
