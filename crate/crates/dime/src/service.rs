//! Query, compare, and evaluation workflows over a registry root.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use dime_core::{distance_stats, histogram, DistanceStats, EvalReport, Histogram, QueryMetrics, Qrels};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{DatasetManifest, IndexDescriptor, Item, ItemPayload};
use crate::plugin::PluginOptions;
use crate::registry::{Catalog, Registry};
use crate::runtime::Runtime;
use crate::search::{knn, QueryVector};
use crate::store::{BuildRequest, IndexStore, LoadedIndex, StoredRow};

pub const DEFAULT_N: usize = 10;
pub const DEFAULT_BINS: usize = 20;

/// A stage duration, serialized as decimal milliseconds with exactly three
/// fractional digits (integer microseconds underneath).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct Millis {
    pub micros: u64,
}

impl From<Duration> for Millis {
    fn from(d: Duration) -> Self {
        Self { micros: u64::try_from(d.as_micros()).unwrap_or(u64::MAX) }
    }
}

impl Serialize for Millis {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let text = format!("{}.{:03}", self.micros / 1000, self.micros % 1000);
        serde_json::value::RawValue::from_string(text).map_err(serde::ser::Error::custom)?.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Millis {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let ms = f64::deserialize(d)?;
        if ms.is_nan() || ms < 0.0 {
            return Err(serde::de::Error::custom("negative duration"));
        }
        Ok(Self { micros: (ms * 1000.0).round() as u64 })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRef {
    pub index_id: String,
    pub item_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryInput {
    Payload(ItemPayload),
    /// A stored row re-used as the query.
    ItemRef(ItemRef),
}

/// The input fields shared by query and compare requests.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct InputFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uri: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_ref: Option<ItemRef>,
}

impl InputFields {
    pub fn into_input(self) -> Result<QueryInput> {
        match (self.vector, self.text, self.uri, self.item_ref) {
            (None, None, None, Some(r)) => Ok(QueryInput::ItemRef(r)),
            (v, t, u, None) => Ok(QueryInput::Payload(ItemPayload::from_fields(v, t, u)?)),
            _ => Err(Error::InvalidRequest("set exactly one of vector, text, uri, item_ref".into())),
        }
    }
}

impl From<QueryInput> for InputFields {
    fn from(input: QueryInput) -> Self {
        let mut f = InputFields::default();
        match input {
            QueryInput::Payload(ItemPayload::Vector(v)) => f.vector = Some(v),
            QueryInput::Payload(ItemPayload::Text(t)) => f.text = Some(t),
            QueryInput::Payload(ItemPayload::Uri(u)) => f.uri = Some(u),
            QueryInput::ItemRef(r) => f.item_ref = Some(r),
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRequest {
    pub input: QueryInput,
    pub n: usize,
    pub histogram_bins: usize,
}

impl QueryRequest {
    pub fn new(input: QueryInput) -> Self {
        Self { input, n: DEFAULT_N, histogram_bins: DEFAULT_BINS }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidRequest("n must be at least 1".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::InvalidRequest("histogram_bins must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawQueryRequest {
    #[serde(flatten)]
    input: InputFields,
    #[serde(default)]
    n: Option<usize>,
    #[serde(default)]
    histogram_bins: Option<usize>,
}

impl QueryRequest {
    /// Parses the JSON body of a query request.
    pub fn from_json(body: &[u8]) -> Result<Self> {
        let raw: RawQueryRequest =
            serde_json::from_slice(body).map_err(|e| Error::InvalidRequest(format!("bad query body: {e}")))?;
        let req = QueryRequest {
            input: raw.input.into_input()?,
            n: raw.n.unwrap_or(DEFAULT_N),
            histogram_bins: raw.histogram_bins.unwrap_or(DEFAULT_BINS),
        };
        req.validate()?;
        Ok(req)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultNeighbor {
    pub item_id: String,
    pub distance: f64,
    pub metadata: BTreeMap<String, String>,
    pub payload_preview: ItemPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub model_name: String,
    pub index_id: String,
    pub space: String,
    pub index_count: usize,
    pub binarized: bool,
    pub preprocess_ms: Millis,
    pub embed_ms: Millis,
    pub search_ms: Millis,
    pub total_ms: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub neighbors: Vec<ResultNeighbor>,
    /// Absent when no neighbors were returned.
    pub histogram: Option<Histogram>,
    pub stats: Option<DistanceStats>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        Self { code: e.code().to_string(), message: e.to_string() }
    }
}

/// `{"error": {...}}`, the one error shape of the API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorBody,
}

/// One column of a comparison: a result or an inline error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CompareEntry {
    Ok(Box<QueryResult>),
    Err(ErrorEnvelope),
}

#[derive(Debug, Clone, Deserialize)]
pub struct CompareRequest {
    pub query: InputFields,
    #[serde(default)]
    pub index_ids: Vec<String>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub bins: Option<usize>,
}

/// One evaluation query.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalQuery {
    pub query_id: String,
    pub payload: ItemPayload,
}

#[derive(Deserialize)]
struct RawEvalQuery {
    query_id: String,
    #[serde(flatten)]
    input: InputFields,
}

impl<'de> Deserialize<'de> for EvalQuery {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawEvalQuery::deserialize(d)?;
        if raw.query_id.is_empty() {
            return Err(serde::de::Error::custom("query_id is empty"));
        }
        if raw.input.item_ref.is_some() {
            return Err(serde::de::Error::custom("evaluation queries take vector, text, or uri"));
        }
        let payload = ItemPayload::from_fields(raw.input.vector, raw.input.text, raw.input.uri)
            .map_err(serde::de::Error::custom)?;
        Ok(EvalQuery { query_id: raw.query_id, payload })
    }
}

/// Parses newline-delimited JSON evaluation queries.
pub fn parse_queries(text: &str) -> Result<Vec<EvalQuery>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(no, line)| {
            serde_json::from_str(line).map_err(|e| Error::InvalidRequest(format!("queries line {}: {e}", no + 1)))
        })
        .collect()
}

pub fn parse_qrels(text: &str) -> Result<Qrels> {
    Qrels::parse_tsv(text).map_err(|line| Error::InvalidRequest(format!("qrels line {line} is malformed")))
}

/// Registry, embedders, and loaded indexes under one root directory.
#[derive(Debug)]
pub struct Engine {
    registry: Registry,
    runtime: Runtime,
    store: IndexStore,
}

impl Engine {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        Self::open_with(root, PluginOptions::default())
    }

    pub fn open_with(root: impl Into<PathBuf>, opts: PluginOptions) -> Result<Self> {
        let registry = Registry::open(root)?;
        let root = registry.root().to_path_buf();
        Ok(Self { runtime: Runtime::new(&root, opts), store: IndexStore::new(&root), registry })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn runtime(&self) -> &Runtime {
        &self.runtime
    }

    pub fn store(&self) -> &IndexStore {
        &self.store
    }

    pub fn add_dataset(&self, manifest: DatasetManifest) -> Result<String> {
        self.registry.register_dataset(manifest.into_descriptor()?)
    }

    pub fn build_index(&self, req: &BuildRequest) -> Result<IndexDescriptor> {
        self.store.build(&self.registry, &self.runtime, req)
    }

    pub fn load_index(&self, index_id: &str) -> Result<std::sync::Arc<LoadedIndex>> {
        let catalog = self.registry.snapshot();
        self.store.load(catalog.index(index_id)?)
    }

    /// The stored row for `item_id`, without re-embedding.
    pub fn get_row(&self, index_id: &str, item_id: &str) -> Result<StoredRow> {
        self.load_index(index_id)?.row(item_id)
    }

    pub fn item(&self, dataset_id: &str, item_id: &str) -> Result<Item> {
        let catalog = self.registry.snapshot();
        catalog
            .dataset(dataset_id)?
            .item(item_id)
            .cloned()
            .ok_or_else(|| Error::UnknownItem(format!("{item_id:?} in dataset {dataset_id:?}")))
    }

    /// Embeds (or fetches) the query for one index, without searching.
    fn query_vector(&self, catalog: &Catalog, target: &IndexDescriptor, input: &QueryInput) -> Result<QueryVector> {
        let binarized = if target.binarized { dime_core::DType::PackedBinary } else { dime_core::DType::DenseF32 };
        match input {
            QueryInput::Payload(payload) => {
                let model = catalog.model(&target.model_name)?;
                let kind = payload.kind();
                if !model.accepts.contains(&kind) {
                    return Err(Error::Incompatible(format!(
                        "index {:?} model {:?} does not accept {kind} queries",
                        target.id, model.name
                    )));
                }
                if let ItemPayload::Vector(v) = payload {
                    if Some(v.len()) != model.input_dim {
                        return Err(Error::Incompatible(format!(
                            "query dim {} vs model {:?} input_dim {}",
                            v.len(),
                            model.name,
                            model.input_dim.unwrap_or(0)
                        )));
                    }
                }
                let embedding = self.runtime.embed(model, payload)?;
                Ok(QueryVector::for_matrix(embedding, binarized))
            }
            QueryInput::ItemRef(r) => {
                let source = catalog.index(&r.index_id)?;
                if source.space != target.space || source.dim != target.dim || source.binarized != target.binarized {
                    return Err(Error::Incompatible(format!(
                        "item_ref index {:?} (space {:?}, dim {}, binarized {}) vs index {:?} (space {:?}, dim {}, binarized {})",
                        source.id, source.space, source.dim, source.binarized,
                        target.id, target.space, target.dim, target.binarized
                    )));
                }
                Ok(QueryVector::from_row(self.store.load(source)?.row(&r.item_id)?))
            }
        }
    }

    pub fn execute_query(&self, index_id: &str, req: &QueryRequest) -> Result<QueryResult> {
        let start = Instant::now();
        req.validate()?;
        let catalog = self.registry.snapshot();
        let desc = catalog.index(index_id)?;
        let model = catalog.model(&desc.model_name)?;
        let dataset = catalog.dataset(&desc.dataset_id)?;
        let loaded = self.store.load(desc)?;
        let preprocess = start.elapsed();

        let t_embed = Instant::now();
        let q = self.query_vector(&catalog, desc, &req.input)?;
        let embed = t_embed.elapsed();

        let t_search = Instant::now();
        let found = knn(&loaded.matrix, &q, req.n)?;
        let search = t_search.elapsed();

        let items: HashMap<&str, &Item> = dataset.items.iter().map(|i| (i.id.as_str(), i)).collect();
        let distances: Vec<f64> = found.iter().map(|n| n.distance).collect();
        let neighbors = found
            .into_iter()
            .map(|n| {
                let item = items.get(n.item_id.as_str());
                ResultNeighbor {
                    metadata: item.map(|i| i.metadata.clone()).unwrap_or_default(),
                    payload_preview: item.map_or_else(|| ItemPayload::Text(String::new()), |i| i.payload.preview()),
                    item_id: n.item_id,
                    distance: n.distance,
                }
            })
            .collect();
        let (histogram, stats) = if distances.is_empty() {
            (None, None)
        } else {
            (Some(histogram(&distances, req.histogram_bins)?), Some(distance_stats(&distances)?))
        };
        Ok(QueryResult {
            neighbors,
            histogram,
            stats,
            diagnostics: Diagnostics {
                model_name: model.name.clone(),
                index_id: desc.id.clone(),
                space: desc.space.clone(),
                index_count: loaded.matrix.count(),
                binarized: desc.binarized,
                preprocess_ms: preprocess.into(),
                embed_ms: embed.into(),
                search_ms: search.into(),
                total_ms: start.elapsed().into(),
            },
        })
    }

    /// Runs the same input against several indexes; each index embeds with
    /// its own model. Per-index failures become inline error entries.
    pub fn execute_compare(&self, req: &QueryRequest, index_ids: &[String]) -> Result<BTreeMap<String, CompareEntry>> {
        if index_ids.is_empty() {
            return Err(Error::InvalidRequest("EmptyRequest: no index ids".into()));
        }
        req.validate()?;
        Ok(index_ids
            .iter()
            .map(|id| {
                let entry = match self.execute_query(id, req) {
                    Ok(r) => CompareEntry::Ok(Box::new(r)),
                    Err(e) => CompareEntry::Err(ErrorEnvelope { error: (&e).into() }),
                };
                (id.clone(), entry)
            })
            .collect())
    }

    /// Ranks the entire index for one embedding, under the search tie-break.
    pub fn rank_all(&self, loaded: &LoadedIndex, q: &QueryVector) -> Result<Vec<String>> {
        if loaded.matrix.is_empty() {
            return Ok(Vec::new());
        }
        Ok(knn(&loaded.matrix, q, loaded.matrix.count())?.into_iter().map(|n| n.item_id).collect())
    }

    pub fn evaluate_run(&self, index_id: &str, queries: &[EvalQuery], qrels: &Qrels, ks: &[usize]) -> Result<EvalReport> {
        if ks.contains(&0) {
            return Err(Error::InvalidRequest("every k must be at least 1".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = queries.iter().find(|q| !seen.insert(q.query_id.as_str())) {
            return Err(Error::InvalidRequest(format!("duplicate query id {:?}", dup.query_id)));
        }
        let catalog = self.registry.snapshot();
        let desc = catalog.index(index_id)?;
        let model = catalog.model(&desc.model_name)?;
        let loaded = self.store.load(desc)?;
        let dtype = loaded.matrix.dtype();
        let empty = Default::default();
        let mut outcomes = Vec::with_capacity(queries.len());
        for q in queries {
            if !model.accepts.contains(&q.payload.kind()) {
                return Err(Error::PayloadRejected(format!(
                    "query {:?}: model {:?} does not accept {} payloads",
                    q.query_id,
                    model.name,
                    q.payload.kind()
                )));
            }
            let embedding = self.runtime.embed(model, &q.payload)?;
            let ranking = self.rank_all(&loaded, &QueryVector::for_matrix(embedding, dtype))?;
            let relevant = qrels.relevant(&q.query_id).unwrap_or(&empty);
            outcomes.push((q.query_id.clone(), QueryMetrics::score(&ranking, relevant, ks)?));
        }
        Ok(EvalReport::from_outcomes(outcomes))
    }

    /// Evaluates every index over the same queries. Fails as a whole if
    /// any index id is unknown.
    pub fn compare_models(
        &self,
        index_ids: &[String],
        queries: &[EvalQuery],
        qrels: &Qrels,
        ks: &[usize],
    ) -> Result<BTreeMap<String, EvalReport>> {
        let catalog = self.registry.snapshot();
        for id in index_ids {
            catalog.index(id)?;
        }
        index_ids
            .iter()
            .map(|id| Ok((id.clone(), self.evaluate_run(id, queries, qrels, ks)?)))
            .collect()
    }
}
