//! HTTP facade over the pipeline.
//!
//! Every response is `{"version": n, "data": ...}` where `n` is the state
//! version the data was computed against. Mutations go through a single
//! writer, each applied mutation bumps the version by one, and a request
//! carrying a stale `x-ukg-version` header is refused with 409. Reads are
//! served from the last published snapshot and never wait for the writer.

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;

use crate::cli::error_kind;
use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::model::{DatumKind, EntityId, HypothesisId, Source, SourceId, TripleId, VerdictId};
use crate::pipeline::{self, FusionConfig, HypothesisSpec, Statement};
use crate::store::StateDir;

pub const VERSION_HEADER: &str = "x-ukg-version";

/// An immutable view handed to readers.
#[derive(Debug)]
pub struct Snapshot {
    pub version: u64,
    pub graph: KnowledgeGraph,
    pub config: FusionConfig,
}

struct Writer {
    version: u64,
    graph: KnowledgeGraph,
    config: FusionConfig,
    dir: Option<StateDir>,
}

/// Shared state of a running service.
pub struct ServiceState {
    writer: Mutex<Writer>,
    snapshot: RwLock<Arc<Snapshot>>,
}

impl ServiceState {
    /// Serves a graph held in memory only.
    pub fn in_memory(graph: KnowledgeGraph, config: FusionConfig) -> Arc<Self> {
        Self::build(graph, config, None)
    }

    /// Serves a state directory; every mutation is saved before it is
    /// acknowledged.
    pub fn from_dir(dir: StateDir) -> Result<Arc<Self>> {
        let graph = dir.load()?;
        let config = dir.config()?;
        Ok(Self::build(graph, config, Some(dir)))
    }

    fn build(graph: KnowledgeGraph, config: FusionConfig, dir: Option<StateDir>) -> Arc<Self> {
        let snapshot = Arc::new(Snapshot {
            version: 0,
            graph: graph.clone(),
            config: config.clone(),
        });
        Arc::new(Self {
            writer: Mutex::new(Writer {
                version: 0,
                graph,
                config,
                dir,
            }),
            snapshot: RwLock::new(snapshot),
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock poisoned").clone()
    }

    /// Applies `op` to a copy of the graph; on success the copy is saved,
    /// published, and the version bumped.
    async fn mutate<T>(
        &self,
        headers: &HeaderMap,
        op: impl FnOnce(&mut KnowledgeGraph, &FusionConfig) -> Result<T>,
    ) -> Result<(u64, T), ApiError> {
        let mut w = self.writer.lock().await;
        if let Some(expected) = headers.get(VERSION_HEADER) {
            let expected: u64 = expected
                .to_str()
                .ok()
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| ApiError::bad_request(format!("malformed {VERSION_HEADER} header")))?;
            if expected != w.version {
                return Err(ApiError {
                    status: StatusCode::CONFLICT,
                    kind: "version_conflict",
                    message: format!("state is at version {}, request was made against {expected}", w.version),
                    version: w.version,
                });
            }
        }
        let mut graph = w.graph.clone();
        let value = op(&mut graph, &w.config).map_err(|e| ApiError::from_error(e, w.version))?;
        if let Some(dir) = &w.dir {
            dir.save(&graph).map_err(|e| ApiError::from_error(e, w.version))?;
        }
        w.version += 1;
        w.graph = graph;
        let snapshot = Arc::new(Snapshot {
            version: w.version,
            graph: w.graph.clone(),
            config: w.config.clone(),
        });
        *self.snapshot.write().expect("snapshot lock poisoned") = snapshot;
        Ok((w.version, value))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
    version: u64,
}

impl ApiError {
    fn bad_request(message: String) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            kind: "validation",
            message,
            version: 0,
        }
    }

    fn from_error(e: Error, version: u64) -> Self {
        let status = match &e {
            Error::UnknownId(_) | Error::UnknownSource(_) => StatusCode::NOT_FOUND,
            Error::DomainMismatch { .. }
            | Error::InvariantViolation(_)
            | Error::OutOfRange { .. }
            | Error::UnknownPredicate(_)
            | Error::Config(_)
            | Error::Parse { .. }
            | Error::Json(_) => StatusCode::BAD_REQUEST,
            Error::Duplicate { .. } | Error::AlreadyApplied(_) | Error::Locked(_) => StatusCode::CONFLICT,
            Error::Integrity(_)
            | Error::Taxonomy(_)
            | Error::NonTermination { .. }
            | Error::VerdictUndetermined(_)
            | Error::VersionMismatch { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            kind: error_kind(&e),
            message: e.to_string(),
            version,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "version": self.version,
            "error": {"kind": self.kind, "message": self.message},
        });
        (self.status, Json(body)).into_response()
    }
}

#[derive(Serialize)]
struct Envelope<T> {
    version: u64,
    data: T,
}

fn ok<T: Serialize>(version: u64, data: T) -> Response {
    Json(Envelope { version, data }).into_response()
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

type AppState = Arc<ServiceState>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sources", get(list_sources).post(add_source))
        .route("/capture", post(capture))
        .route("/associate", post(associate))
        .route("/establish", post(establish))
        .route("/triples", get(list_triples))
        .route("/triples/{id}/provenance", get(provenance))
        .route("/hypotheses", get(list_hypotheses).post(add_hypothesis))
        .route("/hypotheses/{id}/test", post(test_hypothesis))
        .route("/verdicts/{id}", get(get_verdict))
        .route("/verdicts/{id}/propagate", post(propagate))
        .route("/audit", get(audit))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await?;
    Ok(())
}

async fn list_sources(State(st): State<AppState>) -> Response {
    let snap = st.snapshot();
    let sources: Vec<&Source> = snap.graph.sources().collect();
    ok(snap.version, sources)
}

async fn add_source(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let source: Source = parse_body(&body)?;
    let (version, source) = st
        .mutate(&headers, |g, _| {
            g.add_source(source.clone())?;
            Ok(source)
        })
        .await?;
    Ok(ok(version, source))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptureRequest {
    source: SourceId,
    statements: Vec<Statement>,
}

async fn capture(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let req: CaptureRequest = parse_body(&body)?;
    let (version, report) = st
        .mutate(&headers, |g, c| pipeline::capture(g, &req.source, &req.statements, c))
        .await?;
    Ok(ok(version, report))
}

async fn associate(State(st): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    let (version, report) = st.mutate(&headers, pipeline::associate).await?;
    Ok(ok(version, report))
}

async fn establish(State(st): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    let (version, report) = st.mutate(&headers, pipeline::establish).await?;
    Ok(ok(version, report))
}

#[derive(Deserialize)]
struct TripleFilter {
    kind: Option<String>,
    subject: Option<String>,
}

async fn list_triples(State(st): State<AppState>, Query(filter): Query<TripleFilter>) -> Result<Response, ApiError> {
    let snap = st.snapshot();
    let kind = match filter.kind.as_deref().filter(|k| !k.is_empty()) {
        Some(k) => Some(k.parse::<DatumKind>().map_err(|e| ApiError::bad_request(e.to_string()))?),
        None => None,
    };
    let subject = filter.subject.filter(|s| !s.is_empty()).map(EntityId::new);
    let g = &snap.graph;
    let triples: Vec<_> = g
        .triples()
        .filter(|t| kind.is_none_or(|k| t.kind == k))
        .filter(|t| {
            subject
                .as_ref()
                .is_none_or(|s| &t.subject == s || g.resolve_entity(&t.subject) == g.resolve_entity(s))
        })
        .collect();
    Ok(ok(snap.version, triples))
}

async fn provenance(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let snap = st.snapshot();
    let id: TripleId = id.parse().map_err(|e| ApiError::from_error(e, snap.version))?;
    let tree = pipeline::decompose(&snap.graph, id).map_err(|e| ApiError::from_error(e, snap.version))?;
    Ok(ok(snap.version, tree))
}

async fn list_hypotheses(State(st): State<AppState>) -> Response {
    let snap = st.snapshot();
    let hs: Vec<_> = snap.graph.hypotheses().collect();
    ok(snap.version, hs)
}

async fn add_hypothesis(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let spec: HypothesisSpec = parse_body(&body)?;
    let (version, h) = st
        .mutate(&headers, |g, c| {
            let h = spec.into_hypothesis(g, c.theta)?;
            let id = g.add_hypothesis(h)?;
            Ok(g.hypothesis(&id)?.clone())
        })
        .await?;
    Ok(ok(version, h))
}

async fn test_hypothesis(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let id = HypothesisId::new(id);
    let (version, verdict) = st
        .mutate(&headers, |g, c| pipeline::test_hypothesis(g, &id, c))
        .await?;
    let score = verdict.score();
    Ok(ok(version, json!({"score": score, "verdict": verdict})))
}

async fn get_verdict(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let snap = st.snapshot();
    let v = snap
        .graph
        .verdict(&VerdictId::new(id))
        .map_err(|e| ApiError::from_error(e, snap.version))?;
    Ok(ok(snap.version, v))
}

async fn propagate(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let id = VerdictId::new(id);
    let (version, report) = st
        .mutate(&headers, |g, c| pipeline::propagate_feedback(g, &id, c))
        .await?;
    Ok(ok(version, report))
}

async fn audit(State(st): State<AppState>) -> Response {
    let snap = st.snapshot();
    ok(snap.version, snap.graph.audit().entries())
}
