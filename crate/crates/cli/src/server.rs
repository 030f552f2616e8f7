//! JSON chat API over one shared, read-only model.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::header::CONTENT_TYPE;
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mkedg::inference::{respond, validate_history, ChatRequest, HistoryError};
use mkedg::knowledge::KnowledgeBase;
use mkedg::model::Model;
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

pub const HEALTH_BODY: &str = r#"{"status":"ok","model":"MKEDG1"}"#;

pub struct AppState {
    pub model: Model,
    pub kb: KnowledgeBase,
    pub max_steps: usize,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn health() -> impl IntoResponse {
    ([(CONTENT_TYPE, "application/json")], HEALTH_BODY)
}

async fn chat(State(state): State<Arc<AppState>>, body: Result<Json<ChatRequest>, JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    match validate_history(&req.history) {
        Ok(()) => {}
        Err(e @ HistoryError::Empty) => return error(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e @ HistoryError::TooLong { .. }) => return error(StatusCode::PAYLOAD_TOO_LARGE, e.to_string()),
    }
    let worker = Arc::clone(&state);
    let result =
        tokio::task::spawn_blocking(move || respond(&worker.model, &worker.kb, &req.history, worker.max_steps)).await;
    match result {
        Ok(Ok(r)) => Json(r).into_response(),
        Ok(Err(e)) => {
            log::error!("chat request failed: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("decoder task failed: {e}")),
    }
}

fn is_local_origin(origin: &HeaderValue) -> bool {
    let Ok(o) = origin.to_str() else {
        return false;
    };
    ["http://localhost", "http://127.0.0.1", "http://[::1]"]
        .iter()
        .any(|host| o == *host || o.strip_prefix(host).is_some_and(|rest| rest.starts_with(':')))
}

/// Routes for the API, with the static chat UI at `/` when `static_dir`
/// exists.
pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|o, _| is_local_origin(o)))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([CONTENT_TYPE]);
    let mut app = Router::new()
        .route("/api/health", get(health))
        .route("/api/chat", post(chat))
        .with_state(state);
    if let Some(dir) = static_dir.filter(|d| d.is_dir()) {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(cors)
}

pub async fn serve(state: Arc<AppState>, static_dir: Option<PathBuf>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_origins() {
        for ok in [
            "http://localhost",
            "http://localhost:5173",
            "http://127.0.0.1:8080",
            "http://[::1]:3000",
        ] {
            assert!(is_local_origin(&HeaderValue::from_static(ok)), "{ok}");
        }
        for bad in ["http://localhost.evil.com", "https://example.com", "http://127.0.0.10"] {
            assert!(!is_local_origin(&HeaderValue::from_static(bad)), "{bad}");
        }
    }
}
