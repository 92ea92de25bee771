//! Catalog descriptors: items, datasets, models, and indexes.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// True iff `s` matches `[A-Za-z0-9_.:-]+`.
pub fn is_valid_id(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b':' | b'-'))
}

/// Lowercases and maps arbitrary text onto the id alphabet, collapsing
/// runs of other characters into `-`.
pub fn slugify(s: &str) -> String {
    let mut out = String::new();
    for ch in s.chars() {
        if ch.is_ascii_alphanumeric() || matches!(ch, '_' | '.' | ':') {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    Vector,
    Text,
    Uri,
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PayloadKind::Vector => "vector",
            PayloadKind::Text => "text",
            PayloadKind::Uri => "uri",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemPayload {
    Vector(Vec<f32>),
    Text(String),
    /// Opaque media reference, resolved by plugins only.
    Uri(String),
}

impl ItemPayload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            ItemPayload::Vector(_) => PayloadKind::Vector,
            ItemPayload::Text(_) => PayloadKind::Text,
            ItemPayload::Uri(_) => PayloadKind::Uri,
        }
    }

    /// Builds a payload from optional JSON fields, exactly one of which must
    /// be set.
    pub fn from_fields(vector: Option<Vec<f32>>, text: Option<String>, uri: Option<String>) -> Result<Self> {
        let payload = match (vector, text, uri) {
            (Some(v), None, None) => ItemPayload::Vector(v),
            (None, Some(t), None) => ItemPayload::Text(t),
            (None, None, Some(u)) => ItemPayload::Uri(u),
            (None, None, None) => {
                return Err(Error::InvalidRequest("payload needs one of vector, text, uri".into()))
            }
            _ => return Err(Error::InvalidRequest("payload must set exactly one of vector, text, uri".into())),
        };
        payload.check_finite()?;
        Ok(payload)
    }

    pub fn check_finite(&self) -> Result<()> {
        if let ItemPayload::Vector(v) = self {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidRequest("vector payload holds a non-finite value".into()));
            }
        }
        Ok(())
    }

    /// Display preview: text cut to 200 chars, uri as-is, first 8 components.
    pub fn preview(&self) -> ItemPayload {
        match self {
            ItemPayload::Vector(v) => ItemPayload::Vector(v.iter().take(8).copied().collect()),
            ItemPayload::Text(t) => ItemPayload::Text(t.chars().take(200).collect()),
            ItemPayload::Uri(u) => ItemPayload::Uri(u.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawItem", into = "RawItem")]
pub struct Item {
    pub id: String,
    pub payload: ItemPayload,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct RawItem {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vector: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    uri: Option<String>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

impl TryFrom<RawItem> for Item {
    type Error = Error;

    fn try_from(raw: RawItem) -> Result<Self> {
        let payload = ItemPayload::from_fields(raw.vector, raw.text, raw.uri)
            .map_err(|e| Error::InvariantViolation(format!("item {:?}: {e}", raw.id)))?;
        Ok(Item { id: raw.id, payload, metadata: raw.metadata })
    }
}

impl From<Item> for RawItem {
    fn from(item: Item) -> Self {
        let (vector, text, uri) = match item.payload {
            ItemPayload::Vector(v) => (Some(v), None, None),
            ItemPayload::Text(t) => (None, Some(t), None),
            ItemPayload::Uri(u) => (None, None, Some(u)),
        };
        RawItem { id: item.id, vector, text, uri, metadata: item.metadata }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vector,
    Text,
    Image,
    Audio,
    Video,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub id: String,
    pub name: String,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    pub items: Vec<Item>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl DatasetDescriptor {
    pub fn validate(&self) -> Result<()> {
        if !is_valid_id(&self.id) {
            return Err(Error::InvariantViolation(format!("dataset id {:?} is not a valid id", self.id)));
        }
        if self.input_dim == Some(0) {
            return Err(Error::InvariantViolation("input_dim must be positive".into()));
        }
        let mut seen = HashSet::new();
        for item in &self.items {
            if !is_valid_id(&item.id) {
                return Err(Error::InvariantViolation(format!("item {:?}: id is not a valid id", item.id)));
            }
            if !seen.insert(item.id.as_str()) {
                return Err(Error::InvariantViolation(format!("item {:?}: duplicate id", item.id)));
            }
            item.payload
                .check_finite()
                .map_err(|_| Error::InvariantViolation(format!("item {:?}: non-finite vector", item.id)))?;
            if let ItemPayload::Vector(v) = &item.payload {
                match self.input_dim {
                    None => {
                        return Err(Error::InvariantViolation(format!(
                            "item {:?}: vector payload but dataset has no input_dim",
                            item.id
                        )))
                    }
                    Some(d) if d != v.len() => {
                        return Err(Error::InvariantViolation(format!(
                            "item {:?}: vector length {} != input_dim {d}",
                            item.id,
                            v.len()
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn item(&self, id: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn payload_kinds(&self) -> BTreeSet<PayloadKind> {
        self.items.iter().map(|i| i.payload.kind()).collect()
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            id: self.id.clone(),
            name: self.name.clone(),
            modality: self.modality,
            input_dim: self.input_dim,
            count: self.items.len(),
        }
    }
}

/// Listing view of a dataset, without its items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub name: String,
    pub modality: Modality,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    pub count: usize,
}

/// Import format for datasets. The id defaults to the slugified name.
#[derive(Debug, Clone, Deserialize)]
pub struct DatasetManifest {
    #[serde(default)]
    pub id: Option<String>,
    pub name: String,
    pub modality: Modality,
    #[serde(default)]
    pub input_dim: Option<usize>,
    pub items: Vec<Item>,
}

impl DatasetManifest {
    pub fn into_descriptor(self) -> Result<DatasetDescriptor> {
        let id = match self.id {
            Some(id) => id,
            None => slugify(&self.name),
        };
        if id.is_empty() {
            return Err(Error::InvariantViolation(format!("cannot derive a dataset id from name {:?}", self.name)));
        }
        Ok(DatasetDescriptor {
            id,
            name: self.name,
            modality: self.modality,
            input_dim: self.input_dim,
            items: self.items,
            extra: Map::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    BuiltinIdentity,
    BuiltinTextHash,
    Subprocess,
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub name: String,
    pub kind: ModelKind,
    pub accepts: BTreeSet<PayloadKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    pub output_dim: usize,
    pub space: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings_path: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ModelDescriptor {
    pub fn builtin_identity(name: &str, dim: usize, space: &str) -> Self {
        Self::new(name, ModelKind::BuiltinIdentity, [PayloadKind::Vector], Some(dim), dim, space)
    }

    pub fn builtin_text_hash(name: &str, dim: usize, space: &str) -> Self {
        Self::new(name, ModelKind::BuiltinTextHash, [PayloadKind::Text], None, dim, space)
    }

    pub fn subprocess(
        name: &str,
        command: &str,
        accepts: impl IntoIterator<Item = PayloadKind>,
        input_dim: Option<usize>,
        output_dim: usize,
        space: &str,
    ) -> Self {
        let mut m = Self::new(name, ModelKind::Subprocess, accepts, input_dim, output_dim, space);
        m.command = Some(command.to_string());
        m
    }

    fn new(
        name: &str,
        kind: ModelKind,
        accepts: impl IntoIterator<Item = PayloadKind>,
        input_dim: Option<usize>,
        output_dim: usize,
        space: &str,
    ) -> Self {
        Self {
            name: name.to_string(),
            kind,
            accepts: accepts.into_iter().collect(),
            input_dim,
            output_dim,
            space: space.to_string(),
            command: None,
            embeddings_path: None,
            extra: Map::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvariantViolation(format!("model {:?}: {msg}", self.name)));
        if !is_valid_id(&self.name) {
            return bad("name is not a valid id".into());
        }
        if self.output_dim == 0 {
            return bad("output_dim must be at least 1".into());
        }
        if self.accepts.is_empty() {
            return bad("accepts must not be empty".into());
        }
        match (self.accepts.contains(&PayloadKind::Vector), self.input_dim) {
            (true, None) => return Err(Error::MissingField(format!("model {:?}: input_dim", self.name))),
            (false, Some(_)) => return bad("input_dim given but vector payloads not accepted".into()),
            (true, Some(0)) => return bad("input_dim must be positive".into()),
            _ => {}
        }
        let needs_command = self.kind == ModelKind::Subprocess;
        match (needs_command, &self.command) {
            (true, None) => return Err(Error::MissingField(format!("model {:?}: command", self.name))),
            (false, Some(_)) => return bad("command is only valid for subprocess models".into()),
            (true, Some(c)) if shlex::split(c).is_none_or(|argv| argv.is_empty()) => {
                return bad("command is empty or unparsable".into())
            }
            _ => {}
        }
        let needs_path = self.kind == ModelKind::Precomputed;
        match (needs_path, &self.embeddings_path) {
            (true, None) => return Err(Error::MissingField(format!("model {:?}: embeddings_path", self.name))),
            (false, Some(_)) => return bad("embeddings_path is only valid for precomputed models".into()),
            _ => {}
        }
        match self.kind {
            ModelKind::BuiltinIdentity => {
                if self.accepts != BTreeSet::from([PayloadKind::Vector]) {
                    return bad("builtin_identity accepts only vector".into());
                }
                if self.input_dim != Some(self.output_dim) {
                    return bad("builtin_identity needs input_dim == output_dim".into());
                }
            }
            ModelKind::BuiltinTextHash => {
                if self.accepts != BTreeSet::from([PayloadKind::Text]) {
                    return bad("builtin_text_hash accepts only text".into());
                }
            }
            ModelKind::Subprocess | ModelKind::Precomputed => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexDescriptor {
    pub id: String,
    pub dataset_id: String,
    pub model_name: String,
    pub binarized: bool,
    pub dim: usize,
    pub count: usize,
    pub space: String,
    /// Data file path, relative to the registry root.
    pub data_path: String,
    /// Hex SHA-256 of the data section.
    pub checksum: String,
    pub created_at: DateTime<Utc>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}
