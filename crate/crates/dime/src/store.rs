//! Extraction workflow: embed a dataset through a model, optionally
//! binarize, write the index files, and load them back for search.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::Utc;
use dime_core::matrix::MatrixBuilder;
use dime_core::{DType, EmbeddingMatrix, PackedCode, Row};
use serde_json::Map;

use crate::error::{Error, Result};
use crate::format::{self, manifest_path, Provenance};
use crate::model::{is_valid_id, IndexDescriptor};
use crate::registry::{check_compatible, Registry};
use crate::runtime::Runtime;

pub const INDEX_DIR: &str = "indexes";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildRequest {
    pub dataset_id: String,
    pub model_name: String,
    pub binarize: bool,
    /// Defaults to `<dataset>.<model>` plus `.bin` when binarized.
    pub index_id: Option<String>,
}

impl BuildRequest {
    pub fn new(dataset_id: &str, model_name: &str, binarize: bool) -> Self {
        Self { dataset_id: dataset_id.into(), model_name: model_name.into(), binarize, index_id: None }
    }

    pub fn resolved_id(&self) -> String {
        self.index_id.clone().unwrap_or_else(|| {
            format!("{}.{}{}", self.dataset_id, self.model_name, if self.binarize { ".bin" } else { "" })
        })
    }
}

/// One stored row, exactly as written at build time.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredRow {
    Dense(Vec<f32>),
    Packed(PackedCode),
}

#[derive(Debug)]
pub struct LoadedIndex {
    pub descriptor: IndexDescriptor,
    pub matrix: EmbeddingMatrix,
    positions: HashMap<String, usize>,
}

impl LoadedIndex {
    pub fn row(&self, item_id: &str) -> Result<StoredRow> {
        let pos = *self
            .positions
            .get(item_id)
            .ok_or_else(|| Error::UnknownItem(format!("{item_id:?} in index {:?}", self.descriptor.id)))?;
        Ok(match self.matrix.row(pos).expect("position in range") {
            Row::Dense(v) => StoredRow::Dense(v.to_vec()),
            Row::Packed(b) => StoredRow::Packed(PackedCode::from_bytes(b.to_vec(), self.matrix.dim())?),
        })
    }
}

#[derive(Debug)]
pub struct IndexStore {
    root: PathBuf,
    loaded: RwLock<HashMap<String, Arc<LoadedIndex>>>,
    building: Mutex<HashSet<String>>,
}

struct BuildSlot<'a> {
    set: &'a Mutex<HashSet<String>>,
    id: String,
}

impl Drop for BuildSlot<'_> {
    fn drop(&mut self) {
        self.set.lock().expect("build set poisoned").remove(&self.id);
    }
}

impl IndexStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), loaded: RwLock::new(HashMap::new()), building: Mutex::new(HashSet::new()) }
    }

    pub fn data_path(&self, desc: &IndexDescriptor) -> PathBuf {
        self.root.join(&desc.data_path)
    }

    /// Embeds every item in dataset order and registers the result. Nothing
    /// is registered unless every step succeeds.
    pub fn build(&self, registry: &Registry, runtime: &Runtime, req: &BuildRequest) -> Result<IndexDescriptor> {
        let id = req.resolved_id();
        if !is_valid_id(&id) {
            return Err(Error::InvalidRequest(format!("index id {id:?} is not a valid id")));
        }
        // Hold the id slot before reading the catalog.
        let _slot = {
            let mut building = self.building.lock().expect("build set poisoned");
            if !building.insert(id.clone()) {
                return Err(Error::DuplicateId(format!("index {id:?} build in progress")));
            }
            BuildSlot { set: &self.building, id: id.clone() }
        };

        let catalog = registry.snapshot();
        let dataset = catalog.dataset(&req.dataset_id)?;
        let model = catalog.model(&req.model_name)?;
        if catalog.index(&id).is_ok() {
            return Err(Error::DuplicateId(format!("index {id:?} already exists")));
        }
        check_compatible(dataset, model)?;

        let embeddings = runtime.embed_items(model, &dataset.items)?;
        let dtype = if req.binarize { DType::PackedBinary } else { DType::DenseF32 };
        let mut builder = MatrixBuilder::new(dtype, model.output_dim);
        for (item, e) in dataset.items.iter().zip(&embeddings) {
            builder.push(item.id.clone(), e)?;
        }
        let matrix = builder.finish()?;

        let rel = format!("{INDEX_DIR}/{id}.dime");
        let path = self.root.join(&rel);
        let created_at = Utc::now();
        let prov = Provenance {
            index_id: id.clone(),
            dataset_id: dataset.id.clone(),
            model: model.name.clone(),
            space: model.space.clone(),
            created_at,
        };
        let manifest = format::write_index_file(&matrix, &path, &prov)?;
        let desc = IndexDescriptor {
            id: id.clone(),
            dataset_id: dataset.id.clone(),
            model_name: model.name.clone(),
            binarized: req.binarize,
            dim: model.output_dim,
            count: matrix.count(),
            space: model.space.clone(),
            data_path: rel,
            checksum: manifest.sha256,
            created_at,
            extra: Map::new(),
        };
        if let Err(e) = registry.register_index(desc.clone()) {
            remove_files(&path);
            return Err(e);
        }
        self.insert_loaded(desc.clone(), matrix);
        Ok(desc)
    }

    fn insert_loaded(&self, descriptor: IndexDescriptor, matrix: EmbeddingMatrix) -> Arc<LoadedIndex> {
        let positions = matrix.ids().iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let loaded = Arc::new(LoadedIndex { descriptor, matrix, positions });
        self.loaded
            .write()
            .expect("index cache poisoned")
            .insert(loaded.descriptor.id.clone(), loaded.clone());
        loaded
    }

    /// Returns the cached matrix or reads and verifies it from disk.
    pub fn load(&self, desc: &IndexDescriptor) -> Result<Arc<LoadedIndex>> {
        if let Some(hit) = self.loaded.read().expect("index cache poisoned").get(&desc.id) {
            if hit.descriptor == *desc {
                return Ok(hit.clone());
            }
        }
        let path = self.data_path(desc);
        let (matrix, manifest) = format::read_index_file(&path)?;
        if manifest.sha256 != desc.checksum {
            return Err(Error::ChecksumMismatch(path));
        }
        if matrix.dim() != desc.dim
            || matrix.count() != desc.count
            || (matrix.dtype() == DType::PackedBinary) != desc.binarized
        {
            return Err(Error::CorruptIndex(format!("{}: does not match registry entry", path.display())));
        }
        Ok(self.insert_loaded(desc.clone(), matrix))
    }
}

fn remove_files(data_path: &Path) {
    let _ = fs::remove_file(data_path);
    let _ = fs::remove_file(manifest_path(data_path));
}
