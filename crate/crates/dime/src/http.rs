//! HTTP JSON API, version 1.
//!
//! Every response body is either the documented success document or
//! `{"error":{"code":...,"message":...}}`. Engine calls run on the blocking
//! pool since builds and plugin calls block.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

use crate::error::{Error, Result};
use crate::model::{DatasetManifest, DatasetSummary, ModelDescriptor};
use crate::service::{CompareRequest, Engine, ErrorEnvelope, EvalQuery, QueryRequest, DEFAULT_BINS, DEFAULT_N};
use crate::store::BuildRequest;
use dime_core::Qrels;

const MAX_BODY: usize = 64 << 20;

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Origins allowed by CORS; empty disables the CORS layer.
    pub cors_origins: Vec<String>,
    /// Directory with the browser UI's built assets, served at `/`.
    pub static_dir: Option<PathBuf>,
}

/// Compact JSON, the encoding shared by the API and `--output json`.
pub fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("response serializes")
}

/// Compact JSON with object keys sorted at every level.
pub fn encode_sorted<T: Serialize>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("response serializes");
    serde_json::to_vec(&v).expect("value serializes")
}

fn json_response(status: StatusCode, body: Vec<u8>) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

pub fn error_response(e: &Error) -> Response {
    let status = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    json_response(status, encode(&ErrorEnvelope { error: e.into() }))
}

async fn run<F>(status: StatusCode, f: F) -> Response
where
    F: FnOnce() -> Result<Vec<u8>> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(body)) => json_response(status, body),
        Ok(Err(e)) => error_response(&e),
        Err(join) => error_response(&Error::InvalidRequest(format!("handler panicked: {join}"))),
    }
}

fn parse<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| Error::InvalidRequest(format!("bad request body: {e}")))
}

type Shared = State<Arc<Engine>>;

async fn list_datasets(State(engine): Shared) -> Response {
    run(StatusCode::OK, move || {
        let summaries: Vec<DatasetSummary> = engine.registry().snapshot().datasets.iter().map(|d| d.summary()).collect();
        Ok(encode(&summaries))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
}

async fn add_dataset(State(engine): Shared, body: Bytes) -> Response {
    run(StatusCode::CREATED, move || {
        let manifest: DatasetManifest = parse(&body)?;
        Ok(encode(&Created { id: engine.add_dataset(manifest)? }))
    })
    .await
}

async fn get_item(State(engine): Shared, Path((dataset_id, item_id)): Path<(String, String)>) -> Response {
    run(StatusCode::OK, move || Ok(encode(&engine.item(&dataset_id, &item_id)?))).await
}

async fn list_models(State(engine): Shared) -> Response {
    run(StatusCode::OK, move || Ok(encode(&engine.registry().snapshot().models))).await
}

async fn add_model(State(engine): Shared, body: Bytes) -> Response {
    run(StatusCode::CREATED, move || {
        let model: ModelDescriptor = parse(&body)?;
        engine.registry().register_model(model.clone())?;
        Ok(encode(&model))
    })
    .await
}

async fn list_indexes(State(engine): Shared) -> Response {
    run(StatusCode::OK, move || Ok(encode(&engine.registry().snapshot().indexes))).await
}

#[derive(Debug, Deserialize)]
struct BuildBody {
    dataset_id: String,
    model: String,
    #[serde(default)]
    binarize: bool,
    #[serde(default)]
    id: Option<String>,
}

async fn build_index(State(engine): Shared, body: Bytes) -> Response {
    run(StatusCode::CREATED, move || {
        let b: BuildBody = parse(&body)?;
        let req = BuildRequest { dataset_id: b.dataset_id, model_name: b.model, binarize: b.binarize, index_id: b.id };
        Ok(encode(&engine.build_index(&req)?))
    })
    .await
}

async fn query_index(State(engine): Shared, Path(index_id): Path<String>, body: Bytes) -> Response {
    run(StatusCode::OK, move || {
        let req = QueryRequest::from_json(&body)?;
        Ok(encode(&engine.execute_query(&index_id, &req)?))
    })
    .await
}

impl CompareRequest {
    pub fn into_parts(self) -> Result<(QueryRequest, Vec<String>)> {
        let req = QueryRequest {
            input: self.query.into_input()?,
            n: self.n.unwrap_or(DEFAULT_N),
            histogram_bins: self.bins.unwrap_or(DEFAULT_BINS),
        };
        req.validate()?;
        Ok((req, self.index_ids))
    }
}

async fn compare(State(engine): Shared, body: Bytes) -> Response {
    run(StatusCode::OK, move || {
        let (req, ids) = parse::<CompareRequest>(&body)?.into_parts()?;
        Ok(encode(&engine.execute_compare(&req, &ids)?))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct QrelEntry {
    query_id: String,
    item_id: String,
    #[serde(default = "one")]
    relevance: u8,
}

fn one() -> u8 {
    1
}

#[derive(Debug, Deserialize)]
struct EvalBody {
    index_ids: Vec<String>,
    queries: Vec<EvalQuery>,
    #[serde(default)]
    qrels_path: Option<PathBuf>,
    #[serde(default)]
    qrels: Option<Vec<QrelEntry>>,
    #[serde(default = "default_ks")]
    ks: Vec<usize>,
}

fn default_ks() -> Vec<usize> {
    vec![1, 5, 10]
}

impl EvalBody {
    fn qrels(&self) -> Result<Qrels> {
        match (&self.qrels_path, &self.qrels) {
            (Some(path), None) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
                crate::service::parse_qrels(&text)
            }
            (None, Some(entries)) => {
                let mut q = Qrels::new();
                for e in entries {
                    let relevant = match e.relevance {
                        0 => false,
                        1 => true,
                        r => return Err(Error::InvalidRequest(format!("relevance must be 0 or 1, got {r}"))),
                    };
                    q.insert(&e.query_id, &e.item_id, relevant)?;
                }
                Ok(q)
            }
            _ => Err(Error::InvalidRequest("give exactly one of qrels_path, qrels".into())),
        }
    }
}

async fn eval(State(engine): Shared, body: Bytes) -> Response {
    run(StatusCode::OK, move || {
        let b: EvalBody = parse(&body)?;
        let qrels = b.qrels()?;
        let reports = engine.compare_models(&b.index_ids, &b.queries, &qrels, &b.ks)?;
        Ok(encode_sorted(&reports))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Uploaded {
    pub uri: String,
}

async fn upload(State(engine): Shared, body: Bytes) -> Response {
    run(StatusCode::CREATED, move || Ok(encode(&Uploaded { uri: engine.runtime().store_upload(&body)? }))).await
}

async fn api_not_found() -> Response {
    error_response(&Error::NotFound("no such endpoint".into()))
}

async fn method_not_allowed() -> Response {
    let body = ErrorEnvelope {
        error: crate::service::ErrorBody {
            code: "method_not_allowed".into(),
            message: "method not allowed for this endpoint".into(),
        },
    };
    json_response(StatusCode::METHOD_NOT_ALLOWED, encode(&body))
}

const PLACEHOLDER: &str = "<!doctype html><title>DIME</title><h1>DIME</h1>\
<p>The browser UI is not installed. Start the server with <code>--static-dir</code> \
pointing at the built UI, or use the JSON API under <code>/api/v1</code>.</p>";

pub fn router(engine: Arc<Engine>, cfg: &ServerConfig) -> Router {
    let api = Router::new()
        .route("/datasets", get(list_datasets).post(add_dataset))
        .route("/datasets/{id}/items/{item_id}", get(get_item))
        .route("/models", get(list_models).post(add_model))
        .route("/indexes", get(list_indexes).post(build_index))
        .route("/indexes/{id}/query", post(query_index))
        .route("/compare", post(compare))
        .route("/eval", post(eval))
        .route("/uploads", post(upload))
        .fallback(api_not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(DefaultBodyLimit::max(MAX_BODY))
        .with_state(engine);

    let mut app = Router::new().nest("/api/v1", api);
    app = match &cfg.static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(PLACEHOLDER) })),
    };
    if !cfg.cors_origins.is_empty() {
        let origins: Vec<HeaderValue> = cfg.cors_origins.iter().filter_map(|o| o.parse().ok()).collect();
        app = app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(origins))
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    app
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(engine: Arc<Engine>, addr: SocketAddr, cfg: ServerConfig) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(engine, &cfg))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Convenience for building the JSON map shape of `/compare` in clients.
pub type CompareResponse = BTreeMap<String, crate::service::CompareEntry>;
