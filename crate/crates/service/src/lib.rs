//! HTTP/JSON front end over an immutable hint database snapshot.

use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hintforge_core::api::{
    DocsSearchRequest, DocsSearchResponse, EpisodeHintsRequest, ErrorBody, HealthResponse, HintsResponse,
    StatsResponse, StepHintsRequest,
};
use hintforge_core::docs::{DocError, DocSearcher};
use hintforge_core::llm::Embedder;
use hintforge_core::retrieval::{RetrievalError, RetrievalQuery, Retriever};
use thiserror::Error;
use tokio::net::TcpListener;

/// Everything one response is computed from.
pub struct Snapshot {
    pub generation: u64,
    pub retriever: Retriever,
    pub docs: Option<DocSearcher>,
    pub doc_embedder: Option<Arc<dyn Embedder>>,
}

/// Shared state. Handlers clone the current `Arc<Snapshot>` once, so a
/// reload never affects a request already in progress.
pub struct ServiceState {
    current: RwLock<Arc<Snapshot>>,
    generations: AtomicU64,
}

impl ServiceState {
    pub fn new(retriever: Retriever, docs: Option<DocSearcher>, doc_embedder: Option<Arc<dyn Embedder>>) -> Arc<Self> {
        Arc::new(Self {
            current: RwLock::new(Arc::new(Snapshot {
                generation: 1,
                retriever,
                docs,
                doc_embedder,
            })),
            generations: AtomicU64::new(1),
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Swaps in a new snapshot and returns its generation.
    pub fn reload(&self, retriever: Retriever, docs: Option<DocSearcher>, doc_embedder: Option<Arc<dyn Embedder>>) -> u64 {
        let generation = self.generations.fetch_add(1, Ordering::SeqCst) + 1;
        let snap = Arc::new(Snapshot {
            generation,
            retriever,
            docs,
            doc_embedder,
        });
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = snap;
        generation
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{message}")]
    Malformed { status: StatusCode, message: String },
    #[error("{0}")]
    BadRequest(String),
    #[error("no document corpus loaded")]
    NoCorpus,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Docs(#[from] DocError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    fn status_code(&self) -> (StatusCode, &'static str) {
        match self {
            ServiceError::Malformed { status, .. } => (*status, "malformed_request"),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ServiceError::NoCorpus => (StatusCode::NOT_FOUND, "no_corpus"),
            ServiceError::Retrieval(e) => match e {
                RetrievalError::InvalidQuery(_) => (StatusCode::BAD_REQUEST, "bad_request"),
                RetrievalError::MissingScorer(_) => (StatusCode::BAD_REQUEST, "scorer_unavailable"),
                _ => (StatusCode::INTERNAL_SERVER_ERROR, "scorer_failure"),
            },
            ServiceError::Docs(e) => match e {
                DocError::EmptyQuery => (StatusCode::BAD_REQUEST, "bad_request"),
                DocError::NotIndexed { .. } | DocError::NoBackend => (StatusCode::BAD_REQUEST, "not_indexed"),
                _ => (StatusCode::INTERNAL_SERVER_ERROR, "scorer_failure"),
            },
            ServiceError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl From<JsonRejection> for ServiceError {
    fn from(r: JsonRejection) -> Self {
        ServiceError::Malformed {
            status: r.status(),
            message: r.body_text(),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_code();
        (status, Json(ErrorBody::new(code, self.to_string()))).into_response()
    }
}

type Shared = Arc<ServiceState>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn hints(state: Shared, query: Result<RetrievalQuery, String>) -> Result<Json<HintsResponse>, ServiceError> {
    let query = query.map_err(ServiceError::BadRequest)?;
    let snap = state.snapshot();
    let resp = blocking(move || {
        let ranked = snap.retriever.retrieve(&query)?;
        Ok(HintsResponse {
            hits: ranked.hits,
            snapshot: snap.generation,
        })
    })
    .await?;
    Ok(Json(resp))
}

async fn episode_hints(
    State(state): State<Shared>,
    body: Result<Json<EpisodeHintsRequest>, JsonRejection>,
) -> Result<Json<HintsResponse>, ServiceError> {
    let Json(req) = body?;
    hints(state, req.to_query()).await
}

async fn step_hints(
    State(state): State<Shared>,
    body: Result<Json<StepHintsRequest>, JsonRejection>,
) -> Result<Json<HintsResponse>, ServiceError> {
    let Json(req) = body?;
    hints(state, req.to_query()).await
}

async fn docs_search(
    State(state): State<Shared>,
    body: Result<Json<DocsSearchRequest>, JsonRejection>,
) -> Result<Json<DocsSearchResponse>, ServiceError> {
    let Json(req) = body?;
    let (granularity, method) = req.parsed().map_err(ServiceError::BadRequest)?;
    let snap = state.snapshot();
    let resp = blocking(move || {
        let docs = snap.docs.as_ref().ok_or(ServiceError::NoCorpus)?;
        let snippets = docs.search(&req.query, granularity, method, req.depth, snap.doc_embedder.as_deref())?;
        Ok(DocsSearchResponse {
            snippets,
            snapshot: snap.generation,
        })
    })
    .await?;
    Ok(Json(resp))
}

async fn stats(State(state): State<Shared>) -> Json<StatsResponse> {
    let snap = state.snapshot();
    Json(StatsResponse::new(
        snap.retriever.db().stats(),
        snap.docs.as_ref().map(|d| d.pages().len()),
        snap.generation,
    ))
}

async fn healthz(State(state): State<Shared>) -> Json<HealthResponse> {
    let snap = state.snapshot();
    Json(HealthResponse {
        status: "ok".into(),
        hints: snap.retriever.db().len(),
        snapshot: snap.generation,
    })
}

async fn log_latency(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let start = Instant::now();
    let resp = next.run(req).await;
    tracing::info!(
        %method,
        %path,
        status = resp.status().as_u16(),
        latency_ms = start.elapsed().as_secs_f64() * 1e3,
        "request"
    );
    resp
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/v1/hints/episode", post(episode_hints))
        .route("/v1/hints/step", post(step_hints))
        .route("/v1/docs/search", post(docs_search))
        .route("/v1/stats", get(stats))
        .route("/v1/healthz", get(healthz))
        .layer(middleware::from_fn(log_latency))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Shared,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "listening");
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
