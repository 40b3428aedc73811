mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::*;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use ukg_core::service::{router, ServiceState, VERSION_HEADER};
use ukg_core::KnowledgeGraph;

struct Api {
    state: Arc<ServiceState>,
}

impl Api {
    fn new(s3_reliability: f64) -> Self {
        let mut g = KnowledgeGraph::new();
        ukg_core::store::SchemaFile::load(&fixture("schema.json")).unwrap().apply(&mut g).unwrap();
        add_source(&mut g, "S1", 1.0);
        add_source(&mut g, "S3", s3_reliability);
        Self {
            state: ServiceState::in_memory(g, fixture_config()),
        }
    }

    async fn call(&self, method: &str, uri: &str, body: Option<Value>, version: Option<&str>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(v) = version {
            req = req.header(VERSION_HEADER, v);
        }
        let body = match body {
            Some(b) => {
                req = req.header("content-type", "application/json");
                Body::from(b.to_string())
            }
            None => Body::empty(),
        };
        let resp = router(self.state.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    async fn post(&self, uri: &str, body: Value) -> Value {
        let (status, v) = self.call("POST", uri, Some(body), None).await;
        assert_eq!(status, StatusCode::OK, "{uri}: {v}");
        v
    }

    async fn post_empty(&self, uri: &str) -> Value {
        let (status, v) = self.call("POST", uri, None, None).await;
        assert_eq!(status, StatusCode::OK, "{uri}: {v}");
        v
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call("GET", uri, None, None).await
    }

    async fn statements(&self, file: &str) -> Value {
        let text = std::fs::read_to_string(fixture(file)).unwrap();
        let lines: Vec<Value> = text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).unwrap()).collect();
        Value::Array(lines)
    }

    /// Capture both fixture sources, fuse, establish, and register the
    /// fixture hypothesis.
    async fn desk_session(&self) {
        for (src, file) in [("S1", "s1.jsonl"), ("S3", "s3.jsonl")] {
            let statements = self.statements(file).await;
            self.post("/capture", json!({"source": src, "statements": statements})).await;
        }
        self.post_empty("/associate").await;
        self.post_empty("/establish").await;
        let hyp: Value = serde_json::from_str(&std::fs::read_to_string(fixture("hypothesis.json")).unwrap()).unwrap();
        self.post("/hypotheses", hyp).await;
    }
}

#[tokio::test]
async fn hypothesis_is_confirmed_at_098() {
    let api = Api::new(1.0);
    api.desk_session().await;
    let v = api.post_empty("/hypotheses/graduated-1256/test").await;
    assert_eq!(v["data"]["score"], 0.98);
    assert_eq!(v["data"]["verdict"]["status"], "confirmed");
    let id = v["data"]["verdict"]["id"].as_str().unwrap().to_owned();
    let (status, got) = api.get(&format!("/verdicts/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(got["data"]["status"], "confirmed");
}

#[tokio::test]
async fn versions_advance_by_one_per_mutation() {
    let api = Api::new(1.0);
    let (_, v0) = api.get("/sources").await;
    assert_eq!(v0["version"], 0);
    assert_eq!(v0["data"].as_array().unwrap().len(), 2);
    let statements = api.statements("s1.jsonl").await;
    let v1 = api.post("/capture", json!({"source": "S1", "statements": statements})).await;
    assert_eq!(v1["version"], 1);
    let v2 = api.post_empty("/associate").await;
    assert_eq!(v2["version"], 2);
    let (_, triples) = api.get("/triples?kind=mention").await;
    assert_eq!(triples["version"], 2);
    assert_eq!(triples["data"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn stale_version_is_a_conflict() {
    let api = Api::new(1.0);
    let statements = api.statements("s1.jsonl").await;
    let (status, _) = api
        .call("POST", "/capture", Some(json!({"source": "S1", "statements": statements})), Some("0"))
        .await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = api.call("POST", "/associate", None, Some("0")).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["kind"], "version_conflict");
    assert_eq!(body["version"], 1);
    let (status, _) = api.call("POST", "/associate", None, Some("1")).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn error_statuses() {
    let api = Api::new(1.0);
    let (status, body) = api.get("/triples/t999/provenance").await;
    assert_eq!(status, StatusCode::NOT_FOUND, "{body}");
    assert_eq!(body["error"]["kind"], "unknown_id");

    let (status, _) = api.call("POST", "/capture", Some(json!({"nope": 1})), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = api
        .call("POST", "/capture", Some(json!({"source": "S1", "statements": [{"s": "X", "p": "bornIn", "o": "Paris", "credibility": 2.0}]})), None)
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = api
        .call("POST", "/capture", Some(json!({"source": "S9", "statements": []})), None)
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = api.get("/triples?kind=rumour").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = api.call("POST", "/associate", None, Some("abc")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = api.get("/verdicts/v404").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (_, snap) = api.get("/sources").await;
    assert_eq!(snap["version"], 0);
}

#[tokio::test]
async fn propagation_happens_once() {
    let api = Api::new(1.0);
    api.desk_session().await;
    let v = api.post_empty("/hypotheses/graduated-1256/test").await;
    let id = v["data"]["verdict"]["id"].as_str().unwrap().to_owned();
    api.post_empty(&format!("/verdicts/{id}/propagate")).await;
    let (status, body) = api.call("POST", &format!("/verdicts/{id}/propagate"), None, None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["kind"], "already_applied");
}

#[tokio::test]
async fn confirmed_verdict_raises_a_less_reliable_source() {
    let api = Api::new(0.9);
    api.desk_session().await;
    let v = api.post_empty("/hypotheses/graduated-1256/test").await;
    assert_eq!(v["data"]["verdict"]["status"], "confirmed");
    let id = v["data"]["verdict"]["id"].as_str().unwrap().to_owned();
    let report = api.post_empty(&format!("/verdicts/{id}/propagate")).await;
    let deltas = report["data"]["reliability"].as_array().unwrap();
    let s3 = deltas.iter().find(|d| d["source"] == "S3").unwrap();
    let want = 0.9 + 0.1 * (1.0 - 0.9);
    assert_eq!(s3["new"].as_f64().unwrap(), want);
    assert!((want - 0.91).abs() < 1e-12);
    let (_, sources) = api.get("/sources").await;
    let s3 = sources["data"].as_array().unwrap().iter().find(|s| s["id"] == "S3").unwrap();
    assert_eq!(s3["reliability"].as_f64().unwrap(), want);
}

#[tokio::test]
async fn provenance_and_audit_are_readable() {
    let api = Api::new(1.0);
    api.desk_session().await;
    let (_, facts) = api.get("/triples?kind=fact&subject=diploma3").await;
    let facts = facts["data"].as_array().unwrap();
    assert_eq!(facts.len(), 1, "{facts:?}");
    let id = facts[0]["id"].as_str().unwrap();
    let (status, tree) = api.get(&format!("/triples/{id}/provenance")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(tree["data"]["children"].as_array().unwrap().len(), 2);
    let (_, audit) = api.get("/audit").await;
    let kinds: Vec<&str> = audit["data"].as_array().unwrap().iter().map(|e| e["event"].as_str().unwrap()).collect();
    assert!(kinds.contains(&"merge"), "{kinds:?}");
    let (_, hs) = api.get("/hypotheses").await;
    assert_eq!(hs["data"].as_array().unwrap().len(), 1);
}
