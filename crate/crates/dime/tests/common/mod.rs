#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use dime::http::{router, ServerConfig};
use dime::model::{DatasetManifest, ModelDescriptor, PayloadKind};
use dime::Engine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const ECHO: &str = env!("CARGO_BIN_EXE_dime-echo-plugin");
pub const DIME: &str = env!("CARGO_BIN_EXE_dime");

/// Eight short texts; "a", "e" and "h" share their wording with no other item.
pub fn toy_items() -> Vec<(&'static str, &'static str)> {
    vec![
        ("a", "a dog runs in the park"),
        ("b", "a cat sleeps on the sofa"),
        ("c", "dog and cat play together"),
        ("d", "the red car drives fast"),
        ("e", "fresh bread from the oven"),
        ("f", "a dog sleeps on the sofa"),
        ("g", "blue car parked outside"),
        ("h", "mountain lake at sunrise"),
    ]
}

pub fn toy_manifest() -> Value {
    let items: Vec<Value> = toy_items()
        .into_iter()
        .map(|(id, t)| json!({"id": id, "text": t, "metadata": {"len": t.len().to_string()}}))
        .collect();
    json!({"id": "toy", "name": "Toy texts", "modality": "text", "items": items})
}

pub fn vector_manifest(id: &str, rows: &[(&str, Vec<f32>)]) -> Value {
    let items: Vec<Value> = rows.iter().map(|(i, v)| json!({"id": i, "vector": v})).collect();
    json!({"id": id, "name": id, "modality": "vector", "input_dim": rows.first().map_or(0, |r| r.1.len()), "items": items})
}

pub fn manifest(v: Value) -> DatasetManifest {
    serde_json::from_value(v).unwrap()
}

/// Engine with the toy dataset, a text-hash model `th16` (D=16), and
/// nothing built.
pub fn toy_engine(root: &Path) -> Engine {
    let engine = Engine::open(root).unwrap();
    engine.add_dataset(manifest(toy_manifest())).unwrap();
    engine.registry().register_model(ModelDescriptor::builtin_text_hash("th16", 16, "hash")).unwrap();
    engine
}

pub fn echo_model(name: &str, dim: usize, extra_args: &str) -> ModelDescriptor {
    let cmd = format!("{ECHO} --dim {dim} --space echo {extra_args}");
    ModelDescriptor::subprocess(name, &cmd, [PayloadKind::Vector], Some(dim), dim, "echo")
}

pub struct Api {
    pub app: axum::Router,
    pub engine: Arc<Engine>,
}

impl Api {
    pub fn new(engine: Engine) -> Self {
        let engine = Arc::new(engine);
        Self { app: router(engine.clone(), &ServerConfig::default()), engine }
    }

    pub async fn call(&self, method: &str, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Vec<u8>) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map_or_else(Body::empty, Body::from))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    pub async fn json(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.call(method, uri, body.map(|b| serde_json::to_vec(&b).unwrap())).await;
        let v = serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("non-JSON body ({e}): {bytes:?}"));
        (status, v)
    }
}

/// Checks the error envelope shape; returns the code.
pub fn error_code(v: &Value) -> String {
    let obj = v.as_object().expect("object");
    assert_eq!(obj.len(), 1, "envelope has one key: {v}");
    let err = obj["error"].as_object().expect("error object");
    assert_eq!(err.len(), 2, "{v}");
    assert!(err["message"].is_string());
    err["code"].as_str().unwrap().to_string()
}

/// Checks a QueryResult document field by field.
pub fn assert_query_result(v: &Value) {
    let obj = v.as_object().expect("object");
    let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    assert_eq!(keys, ["diagnostics", "histogram", "neighbors", "stats"], "{v}");
    let neighbors = obj["neighbors"].as_array().unwrap();
    let mut prev = f64::NEG_INFINITY;
    for n in neighbors {
        let n = n.as_object().unwrap();
        assert!(n["item_id"].is_string());
        let d = n["distance"].as_f64().unwrap();
        assert!(d >= prev && d >= 0.0);
        prev = d;
        assert!(n["metadata"].is_object());
        let p = n["payload_preview"].as_object().unwrap();
        assert_eq!(p.len(), 1);
    }
    if neighbors.is_empty() {
        assert!(obj["histogram"].is_null() && obj["stats"].is_null());
    } else {
        let h = obj["histogram"].as_object().unwrap();
        let counts: Vec<u64> = h["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).collect();
        assert_eq!(h["bin_edges"].as_array().unwrap().len(), counts.len() + 1);
        assert_eq!(counts.iter().sum::<u64>(), neighbors.len() as u64);
        let s = obj["stats"].as_object().unwrap();
        assert!(s["min"].as_f64().unwrap() <= s["mean"].as_f64().unwrap());
        assert!(s["mean"].as_f64().unwrap() <= s["max"].as_f64().unwrap() + 1e-12);
    }
    let d = obj["diagnostics"].as_object().unwrap();
    for k in ["model_name", "index_id", "space"] {
        assert!(d[k].is_string(), "{k}");
    }
    assert!(d["index_count"].is_u64());
    assert!(d["binarized"].is_boolean());
    let total = d["total_ms"].as_f64().unwrap();
    for k in ["preprocess_ms", "embed_ms", "search_ms"] {
        let t = d[k].as_f64().unwrap();
        assert!(t >= 0.0 && t <= total, "{k}");
    }
}

/// Removes the `*_ms` timing fields at any depth.
pub fn strip_timings(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.retain(|k, _| !k.ends_with("_ms"));
            m.values_mut().for_each(strip_timings);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timings),
        _ => {}
    }
}
