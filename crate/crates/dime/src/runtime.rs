//! Turns payloads into embeddings through builtin embedders, precomputed
//! tables, or pooled plugin processes.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{is_valid_id, Item, ItemPayload, ModelDescriptor, ModelKind};
use crate::plugin::{PluginOptions, PluginPool};

/// Payloads sent to one plugin session per checkout during extraction.
pub const PLUGIN_BATCH: usize = 64;

const UPLOAD_SCHEME: &str = "upload:";

/// Precomputed embeddings keyed by item id, text, or uri.
type Table = HashMap<String, Vec<f32>>;

#[derive(Debug)]
pub struct Runtime {
    base_dir: PathBuf,
    upload_dir: PathBuf,
    opts: PluginOptions,
    max_idle: usize,
    pools: Mutex<HashMap<String, Arc<PluginPool>>>,
    tables: Mutex<HashMap<String, Arc<Table>>>,
}

#[derive(Deserialize)]
struct TableRow {
    id: String,
    embedding: Vec<f32>,
}

impl Runtime {
    /// `base_dir` anchors relative `embeddings_path` values; uploads live in
    /// `<base_dir>/uploads`.
    pub fn new(base_dir: impl Into<PathBuf>, opts: PluginOptions) -> Self {
        let base_dir = base_dir.into();
        Self {
            upload_dir: base_dir.join("uploads"),
            base_dir,
            opts,
            max_idle: 4,
            pools: Mutex::new(HashMap::new()),
            tables: Mutex::new(HashMap::new()),
        }
    }

    pub fn upload_dir(&self) -> &Path {
        &self.upload_dir
    }

    /// Stores raw bytes and returns the `upload:` URI naming them.
    pub fn store_upload(&self, bytes: &[u8]) -> Result<String> {
        fs::create_dir_all(&self.upload_dir)
            .map_err(|e| Error::io(format!("creating {}", self.upload_dir.display()), e))?;
        let name = uuid::Uuid::new_v4().simple().to_string();
        let path = self.upload_dir.join(&name);
        fs::write(&path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(format!("{UPLOAD_SCHEME}{name}"))
    }

    /// Rewrites `upload:<name>` into a `file:` URI on the local upload path.
    pub fn resolve_uri(&self, uri: &str) -> Result<String> {
        let Some(name) = uri.strip_prefix(UPLOAD_SCHEME) else { return Ok(uri.to_string()) };
        if !is_valid_id(name) || name.starts_with('.') {
            return Err(Error::PayloadRejected(format!("bad upload reference {uri:?}")));
        }
        let path = self.upload_dir.join(name);
        if !path.is_file() {
            return Err(Error::PayloadRejected(format!("unknown upload {uri:?}")));
        }
        let abs = fs::canonicalize(&path).map_err(|e| Error::io(format!("resolving {}", path.display()), e))?;
        Ok(format!("file:{}", abs.display()))
    }

    fn pool(&self, model: &ModelDescriptor) -> Arc<PluginPool> {
        let mut pools = self.pools.lock().expect("pool map poisoned");
        pools
            .entry(model.name.clone())
            .or_insert_with(|| Arc::new(PluginPool::new(model.clone(), self.opts.clone(), self.max_idle)))
            .clone()
    }

    fn table(&self, model: &ModelDescriptor) -> Result<Arc<Table>> {
        let mut tables = self.tables.lock().expect("table map poisoned");
        if let Some(t) = tables.get(&model.name) {
            return Ok(t.clone());
        }
        let rel = model.embeddings_path.as_deref().unwrap_or_default();
        let path = self.base_dir.join(rel);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut table = HashMap::new();
        for (no, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row: TableRow = serde_json::from_str(line).map_err(|e| {
                Error::InvalidRequest(format!("{}:{}: bad embedding row: {e}", path.display(), no + 1))
            })?;
            table.insert(row.id, row.embedding);
        }
        let table = Arc::new(table);
        tables.insert(model.name.clone(), table.clone());
        Ok(table)
    }

    fn check_payload(model: &ModelDescriptor, payload: &ItemPayload) -> Result<()> {
        let kind = payload.kind();
        if !model.accepts.contains(&kind) {
            return Err(Error::PayloadRejected(format!("model {:?} does not accept {kind} payloads", model.name)));
        }
        if let ItemPayload::Vector(v) = payload {
            if Some(v.len()) != model.input_dim {
                return Err(Error::PayloadRejected(format!(
                    "model {:?} expects input_dim {:?}, got {}",
                    model.name,
                    model.input_dim,
                    v.len()
                )));
            }
        }
        payload.check_finite().map_err(|e| Error::PayloadRejected(e.to_string()))
    }

    fn check_output(model: &ModelDescriptor, e: Vec<f32>) -> Result<Vec<f32>> {
        if e.len() != model.output_dim {
            return Err(Error::DimMismatch { expected: model.output_dim, actual: e.len() });
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::PluginError(format!("model {:?} produced a non-finite value", model.name)));
        }
        Ok(e)
    }

    fn plugin_payload(&self, payload: &ItemPayload) -> Result<ItemPayload> {
        Ok(match payload {
            ItemPayload::Uri(u) => ItemPayload::Uri(self.resolve_uri(u)?),
            other => other.clone(),
        })
    }

    fn precomputed_key(payload: &ItemPayload) -> Result<&str> {
        match payload {
            ItemPayload::Text(k) | ItemPayload::Uri(k) => Ok(k),
            ItemPayload::Vector(_) => Err(Error::PayloadRejected("precomputed models are keyed by text or uri".into())),
        }
    }

    fn lookup(&self, model: &ModelDescriptor, key: &str) -> Result<Vec<f32>> {
        self.table(model)?
            .get(key)
            .cloned()
            .ok_or_else(|| Error::PayloadRejected(format!("model {:?} has no embedding for {key:?}", model.name)))
    }

    /// Embeds one query payload.
    pub fn embed(&self, model: &ModelDescriptor, payload: &ItemPayload) -> Result<Vec<f32>> {
        Self::check_payload(model, payload)?;
        let out = match (model.kind, payload) {
            (ModelKind::BuiltinIdentity, ItemPayload::Vector(v)) => v.clone(),
            (ModelKind::BuiltinTextHash, ItemPayload::Text(t)) => dime_core::text_hash_embed(t, model.output_dim)?,
            (ModelKind::Precomputed, p) => self.lookup(model, Self::precomputed_key(p)?)?,
            (ModelKind::Subprocess, p) => {
                let p = self.plugin_payload(p)?;
                self.pool(model).checkout()?.embed(&p)?
            }
            (_, p) => {
                return Err(Error::PayloadRejected(format!(
                    "model {:?} cannot embed {} payloads",
                    model.name,
                    p.kind()
                )))
            }
        };
        Self::check_output(model, out)
    }

    /// Embeds dataset items in order. Precomputed models look up rows by
    /// item id; plugins receive batches of [`PLUGIN_BATCH`] per checkout.
    pub fn embed_items(&self, model: &ModelDescriptor, items: &[Item]) -> Result<Vec<Vec<f32>>> {
        for item in items {
            Self::check_payload(model, &item.payload)?;
        }
        match model.kind {
            ModelKind::Precomputed => items
                .iter()
                .map(|i| self.lookup(model, &i.id).and_then(|e| Self::check_output(model, e)))
                .collect(),
            ModelKind::Subprocess => {
                let pool = self.pool(model);
                let mut out = Vec::with_capacity(items.len());
                for batch in items.chunks(PLUGIN_BATCH) {
                    let mut session = pool.checkout()?;
                    for item in batch {
                        let p = self.plugin_payload(&item.payload)?;
                        out.push(Self::check_output(model, session.embed(&p)?)?);
                    }
                }
                Ok(out)
            }
            ModelKind::BuiltinIdentity | ModelKind::BuiltinTextHash => {
                items.iter().map(|i| self.embed(model, &i.payload)).collect()
            }
        }
    }
}
