//! HTTP API consumed by the web UI.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/api/query` | [`QueryRequest`] in, [`QueryResult`] out |
//! | GET | `/api/sessions/{id}/progress` | server-sent [`ProgressEvent`]s |
//! | GET | `/api/clients` | roster |
//! | GET | `/api/charts/presets` | chart presets |

use std::collections::VecDeque;
use std::convert::Infallible;
use std::path::PathBuf;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fedvis_core::compose::presets;
use fedvis_core::datasim::GenSpec;
use fedvis_core::secagg::SessionId;
use futures::Stream;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;
use tower_http::services::ServeDir;

use crate::coordinator::Coordinator;
use crate::message::{ErrorKind, QueryRequest};
use crate::progress::ProgressEvent;
use crate::NetError;

pub fn router(coord: Coordinator, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/query", post(query))
        .route("/api/sessions/{id}/progress", get(progress))
        .route("/api/clients", get(clients))
        .route("/api/charts/presets", get(chart_presets))
        .with_state(coord);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(listener: TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}

struct ApiError(NetError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let kind = self.0.kind();
        let status = match kind {
            ErrorKind::Invalid => StatusCode::BAD_REQUEST,
            ErrorKind::TooFewClients => StatusCode::CONFLICT,
            ErrorKind::Aborted => StatusCode::BAD_GATEWAY,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (
            status,
            Json(json!({ "error": kind, "message": self.0.to_string() })),
        )
            .into_response()
    }
}

async fn query(
    State(coord): State<Coordinator>,
    Json(req): Json<QueryRequest>,
) -> Result<Response, ApiError> {
    let result = coord.query(req).await.map_err(ApiError)?;
    Ok(Json(result).into_response())
}

async fn clients(State(coord): State<Coordinator>) -> Response {
    Json(coord.clients()).into_response()
}

async fn chart_presets() -> Response {
    Json(presets(&GenSpec::default())).into_response()
}

async fn progress(
    State(coord): State<Coordinator>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let sid = SessionId::from_hex(&id)
        .ok_or_else(|| ApiError(NetError::Invalid(format!("bad session id {id:?}"))))?;
    let (history, rx) = coord.progress().subscribe(sid);
    let stream = futures::stream::unfold(
        (VecDeque::from(history), rx, false),
        |(mut queue, mut rx, finished)| async move {
            if finished {
                return None;
            }
            let ev = match queue.pop_front() {
                Some(ev) => ev,
                None => loop {
                    match rx.recv().await {
                        Ok(ev) => break ev,
                        Err(RecvError::Lagged(n)) => {
                            tracing::warn!(skipped = n, "progress subscriber lagged")
                        }
                        Err(RecvError::Closed) => return None,
                    }
                },
            };
            let done = ev.is_terminal();
            Some((Ok(to_event(&ev)), (queue, rx, done)))
        },
    );
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

fn to_event(ev: &ProgressEvent) -> Event {
    Event::default()
        .event(ev.name())
        .data(serde_json::to_string(ev).expect("progress events serialize"))
}
