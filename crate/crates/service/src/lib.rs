//! HTTP front end for pose retrieval.
//!
//! `GET /health` reports the loaded index; `POST /query` takes a
//! [`api::QueryRequest`] and answers with the k nearest stored poses. The
//! index is read once at startup and shared read-only between requests.

pub mod api;
pub mod config;

use std::collections::HashSet;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use posekit_core::descriptor::query_descriptor;
use posekit_core::index::{PoseIndex, INDEX_VERSION};
use tokio::net::TcpListener;

use api::{ErrorBody, ErrorDetail, Health, Invalid, QueryRequest, QueryResponse, SCHEMA_VERSION};
pub use config::{QueryLimits, ServiceConfig};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),

    #[error("index {}: {source}", path.display())]
    Index {
        path: PathBuf,
        source: posekit_core::Error,
    },

    #[error("denylist {}: {source}", path.display())]
    Denylist {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("index checksum changed while serving: {loaded} at load, {now} at shutdown")]
    IndexModified { loaded: String, now: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Shared {
    index: PoseIndex,
    checksum: String,
    limits: QueryLimits,
}

/// Cheap to clone; all clones share one index.
#[derive(Clone)]
pub struct Service {
    shared: Arc<Shared>,
}

impl Service {
    pub fn new(index: PoseIndex, limits: QueryLimits) -> Self {
        let checksum = index.checksum();
        Self {
            shared: Arc::new(Shared {
                index,
                checksum,
                limits,
            }),
        }
    }

    /// Read the index and apply the denylist.
    pub fn load(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        cfg.validate()?;
        let index_err = |source| ServiceError::Index {
            path: cfg.index.clone(),
            source,
        };
        let file = std::fs::File::open(&cfg.index).map_err(|e| index_err(e.into()))?;
        let mut index = PoseIndex::load(std::io::BufReader::new(file)).map_err(index_err)?;
        if let Some(path) = &cfg.denylist {
            let denied = read_denylist(path)?;
            index = without(&index, &denied);
            tracing::info!(denied = denied.len(), "applied denylist");
        }
        let service = Self::new(index, cfg.query);
        tracing::info!(
            rows = service.index().len(),
            dim = service.index().dim(),
            checksum = %service.shared.checksum,
            "index loaded"
        );
        Ok(service)
    }

    pub fn index(&self) -> &PoseIndex {
        &self.shared.index
    }

    pub fn health(&self) -> Health {
        Health {
            v: SCHEMA_VERSION,
            status: "ok".into(),
            rows: self.index().len(),
            dim: self.index().dim(),
            version: INDEX_VERSION,
            checksum: self.shared.checksum.clone(),
        }
    }

    pub fn query(&self, req: &QueryRequest) -> Result<QueryResponse, Invalid> {
        let limits = &self.shared.limits;
        let q = req.validate(limits.default_k, limits.max_k)?;
        let d = query_descriptor(&q.skeleton, q.bbox.as_ref()).map_err(|_| Invalid::DegenerateBox)?;
        let results = self
            .index()
            .knn(&d, q.k)
            .map_err(|e| Invalid::Malformed(e.to_string()))?;
        Ok(QueryResponse {
            v: SCHEMA_VERSION,
            results,
        })
    }

    /// Recompute the checksum and compare with the one taken at load.
    pub fn verify_unchanged(&self) -> Result<(), ServiceError> {
        let now = self.index().checksum();
        if now != self.shared.checksum {
            return Err(ServiceError::IndexModified {
                loaded: self.shared.checksum.clone(),
                now,
            });
        }
        Ok(())
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/health", get(health))
            .route("/query", post(query))
            .fallback(not_found)
            .layer(DefaultBodyLimit::max(self.shared.limits.max_body_bytes))
            .with_state(self.clone())
    }
}

fn read_denylist(path: &Path) -> Result<HashSet<String>, ServiceError> {
    let text = std::fs::read_to_string(path).map_err(|source| ServiceError::Denylist {
        path: path.to_owned(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn without(index: &PoseIndex, denied: &HashSet<String>) -> PoseIndex {
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (i, id) in index.ids().iter().enumerate() {
        if !denied.contains(id) {
            ids.push(id.clone());
            rows.extend_from_slice(index.row(i));
        }
    }
    PoseIndex::from_parts(index.dim(), ids, rows).expect("subset of a valid index")
}

fn error_response(status: StatusCode, code: &str, message: String) -> Response {
    let body = ErrorBody {
        v: SCHEMA_VERSION,
        error: ErrorDetail {
            code: code.into(),
            message,
        },
    };
    (status, Json(body)).into_response()
}

impl IntoResponse for Invalid {
    fn into_response(self) -> Response {
        let status = match self {
            Invalid::Malformed(_) | Invalid::Version(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        (status, Json(self.body())).into_response()
    }
}

async fn health(State(svc): State<Service>) -> Json<Health> {
    Json(svc.health())
}

async fn query(State(svc): State<Service>, body: Result<Bytes, BytesRejection>) -> Response {
    let body = match body {
        Ok(b) => b,
        Err(e) => return error_response(e.status(), "body_rejected", e.body_text()),
    };
    let req: QueryRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return Invalid::Malformed(e.to_string()).into_response(),
    };
    // The scan is CPU-bound; keep it off the async workers.
    match tokio::task::spawn_blocking(move || svc.query(&req)).await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(invalid)) => invalid.into_response(),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

async fn not_found() -> Response {
    error_response(StatusCode::NOT_FOUND, "not_found", "no such endpoint".into())
}

/// Serve on an already bound listener until `shutdown` resolves, then
/// check that the index was not modified.
pub async fn serve_on(
    listener: TcpListener,
    service: Service,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, service.router())
        .with_graceful_shutdown(shutdown)
        .await?;
    service.verify_unchanged()?;
    tracing::info!("index checksum unchanged at shutdown");
    Ok(())
}

/// Load, bind and serve until Ctrl-C.
pub async fn run(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let service = Service::load(&cfg)?;
    let listener = TcpListener::bind(cfg.bind).await?;
    serve_on(listener, service, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
