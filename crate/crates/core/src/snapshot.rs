//! Immutable catalog + index + embeddings bundles, swapped atomically.

use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use thiserror::Error;

use crate::catalog::{load_catalog, Catalog, CatalogError};
use crate::personalization::{load_embeddings, EmbeddingStore, PersonalizationError};
use crate::retrieval::InvertedIndex;
use crate::taxonomy::TagTaxonomy;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("catalog: {0}")]
    Catalog(#[from] CatalogError),
    #[error("embeddings: {0}")]
    Embeddings(#[from] PersonalizationError),
}

/// All three parts carry the same snapshot id.
#[derive(Debug)]
pub struct Snapshot {
    pub id: u64,
    pub catalog: Catalog,
    pub index: InvertedIndex,
    pub embeddings: EmbeddingStore,
}

impl Snapshot {
    pub fn build(catalog: Catalog, embeddings: EmbeddingStore, id: u64) -> Self {
        let catalog = catalog.with_snapshot_id(id);
        let embeddings = embeddings.with_snapshot_id(id);
        let index = InvertedIndex::build(&catalog);
        Snapshot {
            id,
            catalog,
            index,
            embeddings,
        }
    }

    pub fn load(
        catalog_path: &Path,
        embeddings_path: &Path,
        taxonomy: TagTaxonomy,
        id: u64,
    ) -> Result<Self, SnapshotError> {
        let catalog = load_catalog(catalog_path, taxonomy)?;
        let embeddings = load_embeddings(embeddings_path)?;
        Ok(Self::build(catalog, embeddings, id))
    }
}

/// Readers clone the current `Arc` and keep using it for the whole request;
/// a reload builds the replacement off to the side and swaps the pointer.
#[derive(Debug)]
pub struct SnapshotCell {
    current: RwLock<Arc<Snapshot>>,
    reload: Mutex<()>,
}

impl SnapshotCell {
    pub fn new(snapshot: Snapshot) -> Self {
        SnapshotCell {
            current: RwLock::new(Arc::new(snapshot)),
            reload: Mutex::new(()),
        }
    }

    pub fn current(&self) -> Arc<Snapshot> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn id(&self) -> u64 {
        self.current().id
    }

    /// Loads new files as snapshot `current + 1`. On error the serving
    /// snapshot is untouched.
    pub fn reload(
        &self,
        catalog_path: &Path,
        embeddings_path: &Path,
        taxonomy: TagTaxonomy,
    ) -> Result<u64, SnapshotError> {
        let _guard = self.reload.lock().unwrap_or_else(|e| e.into_inner());
        let next = self.id() + 1;
        let snapshot = Snapshot::load(catalog_path, embeddings_path, taxonomy, next)?;
        self.swap(snapshot);
        Ok(next)
    }

    /// Installs an already-built snapshot, renumbered to `current + 1`.
    pub fn replace(&self, catalog: Catalog, embeddings: EmbeddingStore) -> u64 {
        let _guard = self.reload.lock().unwrap_or_else(|e| e.into_inner());
        let next = self.id() + 1;
        self.swap(Snapshot::build(catalog, embeddings, next));
        next
    }

    fn swap(&self, snapshot: Snapshot) {
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(snapshot);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{desk_catalog, desk_embeddings, DESK_CATALOG_JSONL, DESK_EMBEDDINGS};

    #[test]
    fn reload_increments_and_failure_keeps_old() {
        let dir = tempfile::tempdir().unwrap();
        let cat = dir.path().join("catalog.jsonl");
        let emb = dir.path().join("embeddings.txt");
        std::fs::write(&cat, DESK_CATALOG_JSONL).unwrap();
        std::fs::write(&emb, DESK_EMBEDDINGS).unwrap();

        let cell = SnapshotCell::new(Snapshot::build(desk_catalog(), desk_embeddings(), 1));
        let held = cell.current();
        assert_eq!(cell.reload(&cat, &emb, TagTaxonomy::default_taxonomy()).unwrap(), 2);
        let s = cell.current();
        assert_eq!((s.id, s.catalog.snapshot_id(), s.embeddings.snapshot_id(), s.index.built_from_snapshot()), (2, 2, 2, 2));
        assert_eq!(held.id, 1);

        std::fs::write(&cat, "{not json").unwrap();
        assert!(cell.reload(&cat, &emb, TagTaxonomy::default_taxonomy()).is_err());
        assert_eq!(cell.id(), 2);
        assert_eq!(cell.current().catalog.len(), 8);
    }
}
