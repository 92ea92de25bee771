mod common;

use std::fs;

use common::*;
use dime::model::{ItemPayload, ModelDescriptor};
use dime::registry::{load_registry, persist_registry};
use dime::service::{ItemRef, QueryInput, QueryRequest};
use dime::store::{BuildRequest, StoredRow};
use dime::{Engine, Error};
use dime_core::{binarize, text_hash_embed, unpack_bits};
use serde_json::json;

fn three_vectors() -> serde_json::Value {
    vector_manifest("v3", &[("p", vec![1.0, 2.0]), ("q", vec![-1.0, 0.5]), ("r", vec![0.0, -3.0])])
}

#[test]
fn registry_round_trip_with_two_of_each() {
    let dir = tempfile::tempdir().unwrap();
    let engine = toy_engine(dir.path());
    engine.add_dataset(manifest(three_vectors())).unwrap();
    engine.registry().register_model(ModelDescriptor::builtin_identity("id2", 2, "plane")).unwrap();
    engine.build_index(&BuildRequest::new("v3", "id2", false)).unwrap();

    let before = engine.registry().snapshot();
    assert_eq!((before.datasets.len(), before.models.len(), before.indexes.len()), (2, 2, 1));
    let reopened = load_registry(dir.path()).unwrap();
    assert_eq!(*before, reopened);
    let other = tempfile::tempdir().unwrap();
    persist_registry(other.path(), &reopened).unwrap();
    assert_eq!(load_registry(other.path()).unwrap(), reopened);
    let again = Engine::open(dir.path()).unwrap();
    assert_eq!(*again.registry().snapshot(), *before);
}

#[test]
fn dataset_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::open(dir.path()).unwrap();
    let dup = vector_manifest("d", &[("x", vec![1.0]), ("x", vec![2.0])]);
    let e = engine.add_dataset(manifest(dup)).unwrap_err();
    assert!(matches!(&e, Error::InvariantViolation(m) if m.contains("\"x\"")), "{e}");
    let mut bad = vector_manifest("d", &[("x", vec![1.0, 2.0, 3.0, 4.0]), ("y", vec![1.0, 2.0, 3.0])]);
    bad["input_dim"] = json!(4);
    let e = engine.add_dataset(manifest(bad)).unwrap_err();
    assert!(matches!(&e, Error::InvariantViolation(m) if m.contains("\"y\"")), "{e}");
    engine.add_dataset(manifest(three_vectors())).unwrap();
    assert!(matches!(engine.add_dataset(manifest(three_vectors())), Err(Error::DuplicateId(_))));
    assert_eq!(engine.registry().snapshot().datasets.len(), 1);
}

#[test]
fn build_sizes_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::open(dir.path()).unwrap();
    engine.add_dataset(manifest(three_vectors())).unwrap();
    engine.registry().register_model(ModelDescriptor::builtin_identity("id2", 2, "plane")).unwrap();

    let dense = engine.build_index(&BuildRequest::new("v3", "id2", false)).unwrap();
    assert_eq!((dense.count, dense.dim, dense.binarized), (3, 2, false));
    assert_eq!(fs::metadata(dir.path().join(&dense.data_path)).unwrap().len(), 20 + 24);
    let packed = engine.build_index(&BuildRequest::new("v3", "id2", true)).unwrap();
    assert_eq!(packed.id, "v3.id2.bin");
    assert_eq!(fs::metadata(dir.path().join(&packed.data_path)).unwrap().len(), 20 + 3);

    assert_eq!(engine.get_row("v3.id2", "p").unwrap(), StoredRow::Dense(vec![1.0, 2.0]));
    assert!(matches!(engine.get_row("v3.id2", "zz"), Err(Error::UnknownItem(_))));
    assert!(matches!(engine.get_row("nope", "p"), Err(Error::NotFound(_))));
    assert!(matches!(
        engine.build_index(&BuildRequest::new("v3", "id2", false)),
        Err(Error::DuplicateId(_))
    ));

    // Each stored row equals its matrix row and, for packed, binarize(embedding).
    let loaded = engine.load_index("v3.id2.bin").unwrap();
    for (id, v) in [("p", [1.0f32, 2.0]), ("q", [-1.0, 0.5]), ("r", [0.0, -3.0])] {
        let StoredRow::Packed(code) = engine.get_row("v3.id2.bin", id).unwrap() else { panic!() };
        assert_eq!(unpack_bits(&code).unwrap(), binarize(&v));
        let pos = loaded.matrix.position(id).unwrap();
        let dime_core::Row::Packed(bytes) = loaded.matrix.row(pos).unwrap() else { panic!() };
        assert_eq!(bytes, code.bytes());
    }
}

#[test]
fn incompatible_build_runs_no_embedder() {
    let dir = tempfile::tempdir().unwrap();
    let engine = toy_engine(dir.path());
    // The command does not exist; a launch attempt would surface LaunchError.
    let model = ModelDescriptor::subprocess("vec", "/nonexistent/plugin", [dime::model::PayloadKind::Vector], Some(4), 4, "s");
    engine.registry().register_model(model).unwrap();
    let e = engine.build_index(&BuildRequest::new("toy", "vec", false)).unwrap_err();
    assert!(matches!(&e, Error::Incompatible(m) if m.contains("text")), "{e}");
    assert!(engine.registry().snapshot().indexes.is_empty());
    assert!(!dir.path().join("indexes").exists() || fs::read_dir(dir.path().join("indexes")).unwrap().count() == 0);

    let mut d4 = vector_manifest("d4", &[("x", vec![1.0, 2.0, 3.0, 4.0])]);
    d4["input_dim"] = json!(4);
    engine.add_dataset(manifest(d4)).unwrap();
    engine.registry().register_model(ModelDescriptor::builtin_identity("id8", 8, "s")).unwrap();
    let e = engine.registry().validate_compatibility("d4", "id8").unwrap_err();
    assert!(matches!(&e, Error::Incompatible(m) if m.contains('4') && m.contains('8')), "{e}");
    engine.registry().register_model(ModelDescriptor::builtin_identity("id4", 4, "s")).unwrap();
    engine.registry().validate_compatibility("d4", "id4").unwrap();
}

#[test]
fn builtin_builds_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for binarize in [false, true] {
        let x = toy_engine(a.path()).build_index(&BuildRequest::new("toy", "th16", binarize)).unwrap();
        let y = toy_engine(b.path()).build_index(&BuildRequest::new("toy", "th16", binarize)).unwrap();
        assert_eq!(x.checksum, y.checksum);
        assert_eq!(fs::read(a.path().join(&x.data_path)).unwrap(), fs::read(b.path().join(&y.data_path)).unwrap());
        let _ = fs::remove_dir_all(a.path());
        let _ = fs::remove_dir_all(b.path());
    }
}

#[test]
fn corrupted_index_is_rejected_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let desc = toy_engine(dir.path()).build_index(&BuildRequest::new("toy", "th16", false)).unwrap();
    let path = dir.path().join(&desc.data_path);
    let mut bytes = fs::read(&path).unwrap();
    bytes[20 + 5] ^= 0x10;
    fs::write(&path, bytes).unwrap();
    let fresh = Engine::open(dir.path()).unwrap();
    assert!(matches!(fresh.load_index(&desc.id), Err(Error::ChecksumMismatch(_))));
}

#[test]
fn text_queries_match_the_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let engine = toy_engine(dir.path());
    engine.build_index(&BuildRequest::new("toy", "th16", false)).unwrap();
    let req = QueryRequest { n: 3, ..QueryRequest::new(QueryInput::Payload(ItemPayload::Text("dog".into()))) };
    let got = engine.execute_query("toy.th16", &req).unwrap();

    // Oracle: embed every item and the query directly, full sort by (distance, id).
    let q = text_hash_embed("dog", 16).unwrap();
    let mut all: Vec<(f32, &str)> = toy_items()
        .into_iter()
        .map(|(id, t)| {
            let e = text_hash_embed(t, 16).unwrap();
            (e.iter().zip(&q).fold(0f32, |s, (a, b)| s + (a - b) * (a - b)), id)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    let want: Vec<&str> = all.iter().take(3).map(|x| x.1).collect();
    let have: Vec<&str> = got.neighbors.iter().map(|n| n.item_id.as_str()).collect();
    assert_eq!(have, want);
    for (n, (d2, _)) in got.neighbors.iter().zip(&all) {
        assert_eq!(n.distance, (*d2 as f64).sqrt());
    }
    assert_eq!(got.diagnostics.index_count, 8);
    assert_eq!(got.histogram.unwrap().total(), 3);
}

#[test]
fn item_ref_queries() {
    let dir = tempfile::tempdir().unwrap();
    let engine = toy_engine(dir.path());
    engine.registry().register_model(ModelDescriptor::builtin_text_hash("th8", 8, "hash")).unwrap();
    engine.registry().register_model(ModelDescriptor::builtin_text_hash("other", 16, "elsewhere")).unwrap();
    for (m, b) in [("th16", false), ("th16", true), ("th8", false), ("other", false)] {
        engine.build_index(&BuildRequest::new("toy", m, b)).unwrap();
    }
    for index in ["toy.th16", "toy.th16.bin"] {
        for (id, _) in toy_items() {
            let req = QueryRequest::new(QueryInput::ItemRef(ItemRef { index_id: index.into(), item_id: id.into() }));
            let r = engine.execute_query(index, &req).unwrap();
            assert_eq!(r.neighbors[0].distance, 0.0);
            assert!(r.neighbors.iter().take_while(|n| n.distance == 0.0).any(|n| n.item_id == id));
        }
    }
    let from = |index: &str| QueryRequest::new(QueryInput::ItemRef(ItemRef { index_id: index.into(), item_id: "a".into() }));
    for (src, dst) in [("toy.th16", "toy.th16.bin"), ("toy.th8", "toy.th16"), ("toy.other", "toy.th16")] {
        assert!(matches!(engine.execute_query(dst, &from(src)), Err(Error::Incompatible(_))), "{src} -> {dst}");
    }
    assert!(matches!(
        engine.execute_query("toy.th16", &QueryRequest::new(QueryInput::ItemRef(ItemRef { index_id: "toy.th16".into(), item_id: "zz".into() }))),
        Err(Error::UnknownItem(_))
    ));
}

#[test]
fn n_clamps_and_repeats_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::open(dir.path()).unwrap();
    engine
        .add_dataset(manifest(json!({"id":"two","name":"two","modality":"text","items":[{"id":"x","text":"dog"},{"id":"y","text":"cat"}]})))
        .unwrap();
    engine.registry().register_model(ModelDescriptor::builtin_text_hash("th", 8, "h")).unwrap();
    engine.build_index(&BuildRequest::new("two", "th", false)).unwrap();
    let req = QueryRequest { n: 3, ..QueryRequest::new(QueryInput::Payload(ItemPayload::Text("dog".into()))) };
    let a = engine.execute_query("two.th", &req).unwrap();
    let b = engine.execute_query("two.th", &req).unwrap();
    assert_eq!(a.neighbors.len(), 2);
    assert_eq!(a.neighbors, b.neighbors);
    let wrong = QueryRequest::new(QueryInput::Payload(ItemPayload::Vector(vec![1.0; 8])));
    assert!(matches!(engine.execute_query("two.th", &wrong), Err(Error::Incompatible(_))));
}

#[test]
fn compare_single_index_equals_query() {
    let dir = tempfile::tempdir().unwrap();
    let engine = toy_engine(dir.path());
    engine.build_index(&BuildRequest::new("toy", "th16", false)).unwrap();
    let req = QueryRequest::new(QueryInput::Payload(ItemPayload::Text("sofa cat".into())));
    let single = engine.execute_query("toy.th16", &req).unwrap();
    let cmp = engine.execute_compare(&req, &["toy.th16".into(), "ghost".into()]).unwrap();
    let mut a = serde_json::to_value(&single).unwrap();
    let mut b = serde_json::to_value(&cmp["toy.th16"]).unwrap();
    strip_timings(&mut a);
    strip_timings(&mut b);
    assert_eq!(a, b);
    assert_eq!(error_code(&serde_json::to_value(&cmp["ghost"]).unwrap()), "not_found");
    assert!(matches!(engine.execute_compare(&req, &[]), Err(Error::InvalidRequest(_))));
}

#[test]
fn empty_dataset_index() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::open(dir.path()).unwrap();
    engine.add_dataset(manifest(json!({"id":"none","name":"none","modality":"text","items":[]}))).unwrap();
    engine.registry().register_model(ModelDescriptor::builtin_text_hash("th", 8, "h")).unwrap();
    let desc = engine.build_index(&BuildRequest::new("none", "th", true)).unwrap();
    assert_eq!(fs::metadata(dir.path().join(&desc.data_path)).unwrap().len(), 20);
    let r = engine.execute_query("none.th.bin", &QueryRequest::new(QueryInput::Payload(ItemPayload::Text("x".into())))).unwrap();
    assert!(r.neighbors.is_empty() && r.histogram.is_none() && r.stats.is_none());
}
