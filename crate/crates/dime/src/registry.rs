//! The catalog of datasets, models, and indexes, persisted as
//! `registry.json` under a root directory.
//!
//! Mutations serialize through a writer lock, rewrite the catalog file
//! atomically, and then publish a new immutable snapshot. Readers clone the
//! current snapshot `Arc` and never block writers for long.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{DatasetDescriptor, IndexDescriptor, ModelDescriptor, PayloadKind};

pub const REGISTRY_FILE: &str = "registry.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    #[serde(default)]
    pub datasets: Vec<DatasetDescriptor>,
    #[serde(default)]
    pub models: Vec<ModelDescriptor>,
    #[serde(default)]
    pub indexes: Vec<IndexDescriptor>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Catalog {
    pub fn dataset(&self, id: &str) -> Result<&DatasetDescriptor> {
        self.datasets
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::NotFound(format!("dataset {id:?}")))
    }

    pub fn model(&self, name: &str) -> Result<&ModelDescriptor> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::NotFound(format!("model {name:?}")))
    }

    pub fn index(&self, id: &str) -> Result<&IndexDescriptor> {
        self.indexes
            .iter()
            .find(|i| i.id == id)
            .ok_or_else(|| Error::NotFound(format!("index {id:?}")))
    }

    pub fn validate_compatibility(&self, dataset_id: &str, model_name: &str) -> Result<()> {
        check_compatible(self.dataset(dataset_id)?, self.model(model_name)?)
    }
}

/// Every payload kind in the dataset must be accepted by the model, and
/// vector datasets must match the model's input dimension.
pub fn check_compatible(dataset: &DatasetDescriptor, model: &ModelDescriptor) -> Result<()> {
    for kind in dataset.payload_kinds() {
        if !model.accepts.contains(&kind) {
            return Err(Error::Incompatible(format!(
                "model {:?} does not accept {kind} payloads from dataset {:?}",
                model.name, dataset.id
            )));
        }
        if kind == PayloadKind::Vector && dataset.input_dim != model.input_dim {
            return Err(Error::Incompatible(format!(
                "dataset {:?} input_dim {} vs model {:?} input_dim {}",
                dataset.id,
                dim_str(dataset.input_dim),
                model.name,
                dim_str(model.input_dim)
            )));
        }
    }
    Ok(())
}

fn dim_str(d: Option<usize>) -> String {
    d.map_or_else(|| "none".to_string(), |d| d.to_string())
}

/// Writes `bytes` to a sibling temp file, syncs it, and renames it over
/// `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{file_name}.{}.tmp", uuid::Uuid::new_v4().simple()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(format!("writing {}", path.display()), e)
    })
}

pub fn persist_registry(root: &Path, catalog: &Catalog) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(catalog).expect("catalog serializes");
    bytes.push(b'\n');
    atomic_write(&root.join(REGISTRY_FILE), &bytes)
}

/// Loads the catalog; a missing file is an empty catalog.
pub fn load_registry(root: &Path) -> Result<Catalog> {
    let path = root.join(REGISTRY_FILE);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Catalog::default()),
        Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
    };
    let catalog: Catalog =
        serde_json::from_slice(&bytes).map_err(|e| Error::CorruptRegistry(format!("{}: {e}", path.display())))?;
    for d in &catalog.datasets {
        d.validate().map_err(|e| Error::CorruptRegistry(e.to_string()))?;
    }
    for m in &catalog.models {
        m.validate().map_err(|e| Error::CorruptRegistry(e.to_string()))?;
    }
    Ok(catalog)
}

#[derive(Debug)]
pub struct Registry {
    root: PathBuf,
    snapshot: RwLock<Arc<Catalog>>,
    writer: Mutex<()>,
}

impl Registry {
    /// Opens (creating if needed) the registry rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(format!("creating {}", root.display()), e))?;
        let catalog = load_registry(&root)?;
        Ok(Self { root, snapshot: RwLock::new(Arc::new(catalog)), writer: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// A consistent, immutable view of the catalog.
    pub fn snapshot(&self) -> Arc<Catalog> {
        self.snapshot.read().expect("registry lock poisoned").clone()
    }

    fn mutate<T>(&self, f: impl FnOnce(&mut Catalog) -> Result<T>) -> Result<T> {
        let _guard = self.writer.lock().expect("registry writer poisoned");
        let mut next = (*self.snapshot()).clone();
        let out = f(&mut next)?;
        persist_registry(&self.root, &next)?;
        *self.snapshot.write().expect("registry lock poisoned") = Arc::new(next);
        Ok(out)
    }

    pub fn register_dataset(&self, desc: DatasetDescriptor) -> Result<String> {
        desc.validate()?;
        self.mutate(|c| {
            if c.datasets.iter().any(|d| d.id == desc.id) {
                return Err(Error::DuplicateId(format!("dataset {:?}", desc.id)));
            }
            let id = desc.id.clone();
            c.datasets.push(desc);
            Ok(id)
        })
    }

    /// Records the model. Subprocess models are not launched here.
    pub fn register_model(&self, desc: ModelDescriptor) -> Result<()> {
        desc.validate()?;
        self.mutate(|c| {
            if c.models.iter().any(|m| m.name == desc.name) {
                return Err(Error::DuplicateName(format!("model {:?}", desc.name)));
            }
            c.models.push(desc);
            Ok(())
        })
    }

    pub(crate) fn register_index(&self, desc: IndexDescriptor) -> Result<()> {
        self.mutate(|c| {
            if c.indexes.iter().any(|i| i.id == desc.id) {
                return Err(Error::DuplicateId(format!("index {:?}", desc.id)));
            }
            c.dataset(&desc.dataset_id)?;
            c.model(&desc.model_name)?;
            c.indexes.push(desc);
            Ok(())
        })
    }

    pub fn validate_compatibility(&self, dataset_id: &str, model_name: &str) -> Result<()> {
        self.snapshot().validate_compatibility(dataset_id, model_name)
    }
}
