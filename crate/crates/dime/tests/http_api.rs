mod common;

use axum::http::StatusCode;
use common::*;
use dime::Engine;
use serde_json::{json, Value};

fn api() -> (tempfile::TempDir, Api) {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::open(dir.path()).unwrap();
    (dir, Api::new(engine))
}

async fn happy_setup(api: &Api) {
    let (s, v) = api.json("POST", "/api/v1/datasets", Some(toy_manifest())).await;
    assert_eq!((s, v), (StatusCode::CREATED, json!({"id": "toy"})));
    let model = json!({"name":"th16","kind":"builtin_text_hash","accepts":["text"],"output_dim":16,"space":"hash"});
    let (s, v) = api.json("POST", "/api/v1/models", Some(model)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    for b in [false, true] {
        let (s, v) = api.json("POST", "/api/v1/indexes", Some(json!({"dataset_id":"toy","model":"th16","binarize":b}))).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        assert_eq!(v["count"], 8);
        assert_eq!(v["checksum"].as_str().unwrap().len(), 64);
    }
}

#[tokio::test]
async fn happy_path() {
    let (_d, api) = api();
    happy_setup(&api).await;

    let (s, v) = api.json("GET", "/api/v1/datasets", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!([{"id":"toy","name":"Toy texts","modality":"text","count":8}]));
    let (_, v) = api.json("GET", "/api/v1/models", None).await;
    assert_eq!(v.as_array().unwrap().len(), 1);
    let (_, v) = api.json("GET", "/api/v1/indexes", None).await;
    let ids: Vec<&str> = v.as_array().unwrap().iter().map(|i| i["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["toy.th16", "toy.th16.bin"]);
    let (s, v) = api.json("GET", "/api/v1/datasets/toy/items/c", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["text"], "dog and cat play together");

    for index in ["toy.th16", "toy.th16.bin"] {
        let (s, v) = api.json("POST", &format!("/api/v1/indexes/{index}/query"), Some(json!({"text":"dog","n":3}))).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        assert_query_result(&v);
        assert_eq!(v["neighbors"].as_array().unwrap().len(), 3);
        assert_eq!(v["diagnostics"]["binarized"], index.ends_with(".bin"));

        let (_, v) = api.json("POST", &format!("/api/v1/indexes/{index}/query"), Some(json!({"text":"dog","n":100,"histogram_bins":4}))).await;
        assert_query_result(&v);
        assert_eq!(v["neighbors"].as_array().unwrap().len(), 8);
        assert_eq!(v["histogram"]["counts"].as_array().unwrap().len(), 4);

        let q = json!({"item_ref":{"index_id":index,"item_id":"e"},"n":2});
        let (_, v) = api.json("POST", &format!("/api/v1/indexes/{index}/query"), Some(q)).await;
        assert_query_result(&v);
        assert_eq!(v["neighbors"][0]["distance"], 0.0);
        assert_eq!(v["neighbors"][0]["item_id"], "e");
        assert_eq!(v["neighbors"][0]["metadata"]["len"], "25");
    }
}

#[tokio::test]
async fn compare_and_eval() {
    let (_d, api) = api();
    happy_setup(&api).await;
    let body = json!({"query":{"text":"cat on the sofa"},"index_ids":["toy.th16","toy.th16.bin","nope"],"n":2,"bins":5});
    let (s, v) = api.json("POST", "/api/v1/compare", Some(body)).await;
    assert_eq!(s, StatusCode::OK);
    assert_query_result(&v["toy.th16"]);
    assert_query_result(&v["toy.th16.bin"]);
    assert_eq!(error_code(&v["nope"]), "not_found");

    let (s, v) = api.json("POST", "/api/v1/compare", Some(json!({"query":{"text":"x"},"index_ids":[]}))).await;
    assert_eq!((s, error_code(&v)), (StatusCode::BAD_REQUEST, "invalid_request".into()));
    let (s, v) = api.json("POST", "/api/v1/compare", Some(json!({"query":{"text":"x","vector":[1]},"index_ids":["toy.th16"]}))).await;
    assert_eq!((s, error_code(&v)), (StatusCode::BAD_REQUEST, "invalid_request".into()));

    let body = json!({
        "index_ids": ["toy.th16.bin", "toy.th16"],
        "queries": [{"query_id":"q1","text":"a dog runs in the park"},{"query_id":"q2","text":"mountain"},{"query_id":"q3","text":"car"}],
        "qrels": [{"query_id":"q1","item_id":"a"},{"query_id":"q2","item_id":"h","relevance":1},{"query_id":"q3","item_id":"zz"}],
        "ks": [1, 2]
    });
    let (s, bytes) = api.call("POST", "/api/v1/eval", Some(serde_json::to_vec(&body).unwrap())).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    // Keys are sorted at every level.
    assert_eq!(serde_json::to_vec(&v).unwrap(), bytes);
    let dense = &v["toy.th16"];
    assert_eq!(dense["per_query"]["q1"]["AP"], 1.0);
    assert_eq!(dense["skipped"], json!(["q3"]));
    let aps: Vec<f64> = dense["per_query"].as_object().unwrap().values().map(|q| q["AP"].as_f64().unwrap()).collect();
    assert_eq!(dense["mAP"].as_f64().unwrap(), aps.iter().sum::<f64>() / aps.len() as f64);

    let mut bad = body.clone();
    bad["index_ids"] = json!(["toy.th16", "ghost"]);
    let (s, v) = api.json("POST", "/api/v1/eval", Some(bad)).await;
    assert_eq!((s, error_code(&v)), (StatusCode::NOT_FOUND, "not_found".into()));
    let mut empty = body.clone();
    empty["index_ids"] = json!([]);
    let (s, v) = api.json("POST", "/api/v1/eval", Some(empty)).await;
    assert_eq!((s, v), (StatusCode::OK, json!({})));
}

#[tokio::test]
async fn error_statuses() {
    let (_d, api) = api();
    happy_setup(&api).await;
    let cases: Vec<(&str, &str, Option<Value>, StatusCode, &str)> = vec![
        ("POST", "/api/v1/indexes/toy.th16/query", Some(json!({"text":"dog","n":0})), StatusCode::BAD_REQUEST, "invalid_request"),
        ("POST", "/api/v1/indexes/toy.th16/query", Some(json!({"n":3})), StatusCode::BAD_REQUEST, "invalid_request"),
        ("POST", "/api/v1/indexes/toy.th16/query", Some(json!({"vector":[1,2]})), StatusCode::BAD_REQUEST, "incompatible"),
        ("POST", "/api/v1/indexes/ghost/query", Some(json!({"text":"dog"})), StatusCode::NOT_FOUND, "not_found"),
        ("GET", "/api/v1/datasets/ghost/items/a", None, StatusCode::NOT_FOUND, "not_found"),
        ("GET", "/api/v1/datasets/toy/items/zz", None, StatusCode::NOT_FOUND, "unknown_item"),
        ("POST", "/api/v1/datasets", Some(toy_manifest()), StatusCode::CONFLICT, "duplicate_id"),
        ("POST", "/api/v1/indexes", Some(json!({"dataset_id":"toy","model":"th16"})), StatusCode::CONFLICT, "duplicate_id"),
        ("POST", "/api/v1/models", Some(json!({"name":"th16","kind":"builtin_text_hash","accepts":["text"],"output_dim":16,"space":"hash"})), StatusCode::CONFLICT, "duplicate_name"),
        ("POST", "/api/v1/models", Some(json!({"name":"p","kind":"subprocess","accepts":["text"],"output_dim":4,"space":"s"})), StatusCode::BAD_REQUEST, "missing_field"),
        ("GET", "/api/v1/nowhere", None, StatusCode::NOT_FOUND, "not_found"),
        ("DELETE", "/api/v1/datasets", None, StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed"),
    ];
    for (method, uri, body, status, code) in cases {
        let (s, v) = api.json(method, uri, body).await;
        assert_eq!((s, error_code(&v).as_str()), (status, code), "{method} {uri}: {v}");
    }
    let (s, bytes) = api.call("POST", "/api/v1/datasets", Some(b"{not json".to_vec())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    error_code(&serde_json::from_slice(&bytes).unwrap());
}

#[tokio::test]
async fn plugin_failures_are_502() {
    let (_d, api) = api();
    let rows: Vec<(&str, Vec<f32>)> = vec![("x", vec![1.0, 2.0]), ("y", vec![2.0, 1.0])];
    api.json("POST", "/api/v1/datasets", Some(vector_manifest("v", &rows))).await;
    let model = serde_json::to_value(echo_model("echo", 2, "--die-after 2")).unwrap();
    let (s, v) = api.json("POST", "/api/v1/models", Some(model)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let (s, _) = api.json("POST", "/api/v1/indexes", Some(json!({"dataset_id":"v","model":"echo"}))).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, v) = api.json("POST", "/api/v1/indexes/v.echo/query", Some(json!({"vector":[1,2]}))).await;
    assert_eq!((s, error_code(&v).as_str()), (StatusCode::BAD_GATEWAY, "plugin_error"), "{v}");
    // The dead session is discarded; the next query gets a fresh process.
    let (s, v) = api.json("POST", "/api/v1/indexes/v.echo/query", Some(json!({"vector":[1,2]}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["neighbors"][0]["item_id"], "x");

    let mut wrong = serde_json::to_value(echo_model("wrong", 3, "")).unwrap();
    wrong["command"] = json!(format!("{ECHO} --dim 2 --space echo"));
    api.json("POST", "/api/v1/models", Some(wrong)).await;
    let mut d3 = vector_manifest("v3", &[("x", vec![1.0, 2.0, 3.0])]);
    d3["input_dim"] = json!(3);
    api.json("POST", "/api/v1/datasets", Some(d3)).await;
    let (s, v) = api.json("POST", "/api/v1/indexes", Some(json!({"dataset_id":"v3","model":"wrong"}))).await;
    assert_eq!((s, error_code(&v).as_str()), (StatusCode::BAD_GATEWAY, "handshake_mismatch"), "{v}");
}

#[tokio::test]
async fn uploads_and_static_root() {
    let (_d, api) = api();
    let (s, v) = api.call("POST", "/api/v1/uploads", Some(vec![0, 1, 2, 255])).await;
    assert_eq!(s, StatusCode::CREATED);
    let v: Value = serde_json::from_slice(&v).unwrap();
    assert!(v["uri"].as_str().unwrap().starts_with("upload:"));
    let (s, body) = api.call("GET", "/", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().contains("/api/v1"));

    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>ui</html>").unwrap();
    std::fs::write(ui.path().join("app.js"), "console.log(1)").unwrap();
    let cfg = dime::http::ServerConfig { static_dir: Some(ui.path().into()), cors_origins: vec!["http://localhost:5173".into()] };
    let app = Api { app: dime::http::router(api.engine.clone(), &cfg), engine: api.engine.clone() };
    assert_eq!(app.call("GET", "/", None).await, (StatusCode::OK, b"<html>ui</html>".to_vec()));
    assert_eq!(app.call("GET", "/app.js", None).await.1, b"console.log(1)");
    let (s, v) = app.json("GET", "/api/v1/datasets", None).await;
    assert_eq!((s, v), (StatusCode::OK, json!([])));
}
