//! JSON API over a [`Campaign`].

use std::future::Future;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use sentiscope_core::{AnnotatorId, ImageId};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::campaign::{Campaign, SubmitRequest};
use crate::error::ServiceError;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::Conflict { .. } => StatusCode::CONFLICT,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Journal { .. } | ServiceError::CorruptJournal { .. } | ServiceError::Configuration(_) => {
                tracing::error!(error = %self, "request failed");
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

fn unprocessable(msg: impl Into<String>) -> Response {
    (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "error": msg.into() }))).into_response()
}

#[derive(Debug, Deserialize)]
struct AnnotatorQuery {
    annotator: Option<String>,
}

async fn task(State(c): State<Arc<Campaign>>, Query(q): Query<AnnotatorQuery>) -> Response {
    let Some(annotator) = q.annotator else {
        return unprocessable("missing annotator query parameter");
    };
    match c.next_task(&AnnotatorId::new(annotator)) {
        Ok(Some(task)) => Json(task).into_response(),
        Ok(None) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => e.into_response(),
    }
}

async fn submit(State(c): State<Arc<Campaign>>, body: Bytes) -> Response {
    let request: SubmitRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return unprocessable(format!("invalid annotation body: {e}")),
    };
    match tokio::task::spawn_blocking(move || c.submit(request)).await {
        Ok(Ok(ack)) => (StatusCode::CREATED, Json(ack)).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => {
            tracing::error!(error = %e, "submit task panicked");
            StatusCode::INTERNAL_SERVER_ERROR.into_response()
        }
    }
}

async fn stats(State(c): State<Arc<Campaign>>, Query(q): Query<AnnotatorQuery>) -> Response {
    let annotator = q.annotator.map(AnnotatorId::new);
    Json(c.stats(annotator.as_ref())).into_response()
}

pub fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("bmp") => "image/bmp",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

async fn image(State(c): State<Arc<Campaign>>, UrlPath(id): UrlPath<String>) -> Response {
    let id = ImageId::new(id);
    let Some(path) = c.image_path(&id) else {
        return ServiceError::NotFound(id).into_response();
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(e) => {
            tracing::warn!(path = %path.display(), error = %e, "image unreadable");
            ServiceError::NotFound(id).into_response()
        }
    }
}

pub fn router(campaign: Arc<Campaign>) -> Router {
    Router::new()
        .route("/api/task", get(task))
        .route("/api/annotations", post(submit))
        .route("/api/stats", get(stats))
        .route("/api/images/{image_id}", get(image))
        .with_state(campaign)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    campaign: Arc<Campaign>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(campaign))
        .with_graceful_shutdown(shutdown)
        .await
}
