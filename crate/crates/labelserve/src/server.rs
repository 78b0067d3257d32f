//! Axum routes over a shared [`Session`].

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::sync::watch;

use crate::session::{Session, SessionError, Status};

/// Header carrying a client-chosen key that makes label submissions safe to retry.
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

/// Shared handle: mutations lock the session, status reads take the last
/// published snapshot without touching the lock.
#[derive(Clone)]
pub struct AppState {
    session: Arc<Mutex<Session>>,
    status: watch::Sender<Status>,
}

impl AppState {
    pub fn new(session: Session) -> Self {
        let (status, _) = watch::channel(session.status());
        Self {
            session: Arc::new(Mutex::new(session)),
            status,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn publish(&self, session: &Session) {
        self.status.send_replace(session.status());
    }

    /// Runs `f` on the session and then publishes the new status.
    pub fn with_session<T>(&self, f: impl FnOnce(&mut Session) -> T) -> T {
        let mut s = self.lock();
        let out = f(&mut s);
        self.publish(&s);
        out
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/round/next", post(next_round))
        .route("/labels", post(labels))
        .route("/curve", get(curve))
        .with_state(state)
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let code = match &e {
            SessionError::Conflict(_) => StatusCode::CONFLICT,
            SessionError::BadRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

async fn status(State(state): State<AppState>) -> Json<Status> {
    Json(state.status.borrow().clone())
}

async fn curve(State(state): State<AppState>) -> Response {
    Json(state.lock().curve()).into_response()
}

async fn next_round(State(state): State<AppState>) -> Result<Response, ApiError> {
    let job = state.with_session(|s| s.begin_round())?;
    let outcome = match tokio::task::spawn_blocking(move || job.run()).await {
        Ok(outcome) => outcome,
        Err(e) => Err(malkit::Error::Contract(format!(
            "training worker failed: {e}"
        ))),
    };
    let batch = state.with_session(|s| s.finish_round(outcome))?;
    Ok(Json(batch).into_response())
}

async fn labels(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        None => None,
        Some(v) => Some(
            v.to_str()
                .map_err(|_| {
                    ApiError(
                        StatusCode::BAD_REQUEST,
                        "idempotency key is not text".into(),
                    )
                })?
                .to_string(),
        ),
    };
    let labels = parse_labels(&body).map_err(|m| ApiError(StatusCode::BAD_REQUEST, m))?;
    let receipt = state.with_session(|s| s.submit_labels(labels, key))?;
    Ok(Json(receipt).into_response())
}

/// Parses `{"<id>": <class>, ...}` with non-negative integer ids and classes.
fn parse_labels(body: &[u8]) -> Result<BTreeMap<usize, usize>, String> {
    let raw: serde_json::Map<String, serde_json::Value> =
        serde_json::from_slice(body).map_err(|e| format!("body must be a JSON object: {e}"))?;
    raw.into_iter()
        .map(|(k, v)| {
            let id = k
                .parse::<usize>()
                .map_err(|_| format!("id {k:?} is not a sample id"))?;
            let class = v.as_u64().ok_or_else(|| {
                format!("class for id {id} must be a non-negative integer, got {v}")
            })?;
            Ok((id, class as usize))
        })
        .collect()
}

/// Serves until the process receives ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
