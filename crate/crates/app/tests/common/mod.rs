#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use sticker_app::commands::{build_index_run, load_dataset, train_run};
use sticker_app::engine::Engine;
use sticker_app::session::{MemoryStore, SessionManager};
use sticker_core::config::AppConfig;
use sticker_core::dataset::{Corpus, CorpusFormat};
use sticker_core::pipeline::Backends;
use sticker_core::synthetic::{planted_config, write_planted_corpus, PlantedSpec};
use sticker_core::Checkpoint;
use tower::ServiceExt;

/// Planted corpus with a trained checkpoint and its index on disk.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub corpus: Corpus,
    pub cfg: AppConfig,
    pub dataset: PathBuf,
    pub checkpoint_path: PathBuf,
    pub index_path: PathBuf,
    pub checkpoint: Checkpoint,
}

impl Fixture {
    pub fn new(epochs: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let dataset = dir.path().join("corpus");
        write_planted_corpus(&dataset, &PlantedSpec::default()).unwrap();
        let mut cfg = planted_config();
        cfg.training.epochs = epochs;
        let corpus = load_dataset(&dataset, CorpusFormat::Stickerint, &cfg).unwrap();
        let run = dir.path().join("run");
        let (checkpoint, _, artifacts) = train_run(&corpus, &cfg, &run).unwrap();
        let index = build_index_run(&corpus, &cfg, &checkpoint).unwrap();
        let index_path = run.join("index.json");
        index.save(&index_path).unwrap();
        Self { corpus, cfg, dataset, checkpoint_path: artifacts.checkpoint, index_path, checkpoint, dir }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn engine(&self) -> Engine {
        let backends = Backends::from_config(&self.cfg).unwrap();
        Engine::open(&self.corpus, &self.checkpoint_path, &self.index_path, backends, None).unwrap()
    }

    pub fn manager(&self) -> Arc<SessionManager> {
        Arc::new(SessionManager::new(Arc::new(self.engine()), Box::new(MemoryStore::default())).unwrap())
    }
}

/// One request against the router; the body is parsed as JSON when possible.
pub async fn call(router: &Router, method: &str, uri: &str, body: Option<serde_json::Value>) -> (StatusCode, serde_json::Value) {
    let (status, bytes) = call_raw(router, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null))
}

pub async fn call_raw(router: &Router, method: &str, uri: &str, body: Option<serde_json::Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(v) => req.body(Body::from(serde_json::to_vec(&v).unwrap())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}
