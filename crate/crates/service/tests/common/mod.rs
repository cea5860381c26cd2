#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use exdebug_core::data::write_dataset;
use exdebug_core::export::export_model;
use exdebug_core::prelude::*;
use exdebug_core::sim::synthetic::SyntheticBenchmark;
use exdebug_service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub bench: SyntheticBenchmark,
    pub model: TextClassifier,
    pub dataset: PathBuf,
    pub model_path: PathBuf,
}

impl Fixture {
    pub fn data_dir(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    pub fn app(&self) -> Router {
        router(Arc::new(AppState::open(&self.data_dir()).unwrap()))
    }
}

pub fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        train_size: 300,
        id_size: 100,
        ood_size: 100,
        seed: 2,
        ..SyntheticSpec::default()
    }
}

pub fn fixture() -> Fixture {
    fixture_with(&small_spec(), &TrainConfig { epochs: 10, ..TrainConfig::default() })
}

pub fn fixture_with(spec: &SyntheticSpec, train: &TrainConfig) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let bench = generate_synthetic(spec).unwrap();
    let init = TextClassifier::new(bench.vocab.len(), 2, &ModelConfig::default()).unwrap();
    let model = train_baseline(&init, &bench.train, train).unwrap();
    let dataset = dir.path().join("train.jsonl");
    write_dataset(&dataset, &bench.train, &["neg".into(), "pos".into()]).unwrap();
    let model_path = dir.path().join("model.bin");
    export_model(&model, &bench.vocab, &model_path).unwrap();
    Fixture {
        dir,
        bench,
        model,
        dataset,
        model_path,
    }
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => builder
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&v).unwrap())),
        None => builder.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

pub async fn create_from_model(app: &Router, f: &Fixture) -> String {
    let (status, body) = call_json(
        app,
        "POST",
        "/sessions",
        Some(json!({"dataset_path": f.dataset, "model_path": f.model_path})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

/// Polls status until the session is idle again.
pub async fn wait_idle(app: &Router, id: &str) -> Value {
    for _ in 0..6000 {
        let (_, status) = call_json(app, "GET", &format!("/sessions/{id}/status"), None).await;
        if status["status"] == "idle" {
            return status;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("retraining did not finish");
}

pub fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}
