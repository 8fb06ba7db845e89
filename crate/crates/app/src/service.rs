//! HTTP surface of the session manager (JSON bodies).

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::error::{AppError, ErrorKind};
use crate::session::{CommitSticker, CreateSession, PostMessage, SessionManager};

pub const DEFAULT_K: usize = 5;

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let (status, kind) = match self.kind() {
            ErrorKind::NotFound => (StatusCode::NOT_FOUND, "not_found"),
            ErrorKind::Precondition => (StatusCode::CONFLICT, "precondition"),
            ErrorKind::Invalid => (StatusCode::BAD_REQUEST, "invalid"),
            ErrorKind::Conflict => (StatusCode::CONFLICT, "version"),
            ErrorKind::Internal => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(json!({ "error": self.to_string(), "kind": kind }))).into_response()
    }
}

type Shared = Arc<SessionManager>;
type ApiResult<T> = Result<T, AppError>;

fn parse<T: serde::de::DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    Ok(serde_json::from_slice(body)?)
}

async fn healthz(State(m): State<Shared>) -> Json<serde_json::Value> {
    let e = m.engine();
    Json(json!({
        "status": "ok",
        "checkpoint_id": e.checkpoint_id,
        "index_id": e.index_id,
        "stickers": e.index_len(),
        "context_window": e.context_window,
    }))
}

async fn create_session(State(m): State<Shared>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateSession = parse(&body)?;
    Ok((StatusCode::CREATED, Json(m.create(&req)?)))
}

async fn get_session(State(m): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(m.get(&id)?))
}

async fn post_message(
    State(m): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let msg: PostMessage = serde_json::from_slice(&body)?;
    Ok(Json(m.post_message(&id, &msg)?))
}

async fn commit_sticker(
    State(m): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: CommitSticker = serde_json::from_slice(&body)?;
    Ok(Json(m.commit_sticker(&id, &req)?))
}

#[derive(Debug, Deserialize)]
struct SuggestParams {
    k: Option<usize>,
    #[serde(default)]
    relation_scores: bool,
}

async fn suggestions(
    State(m): State<Shared>,
    Path(id): Path<String>,
    Query(params): Query<SuggestParams>,
) -> ApiResult<impl IntoResponse> {
    let k = params.k.unwrap_or(DEFAULT_K);
    // Retrieval may call blocking model clients.
    let out = tokio::task::spawn_blocking(move || m.suggest(&id, k, params.relation_scores))
        .await
        .map_err(|e| AppError::Io(std::io::Error::other(e)))??;
    Ok(Json(out))
}

async fn sticker_image(State(m): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let (mime, bytes) = m.engine().sticker_image(&id)?;
    Ok(([(header::CONTENT_TYPE, mime)], bytes))
}

pub fn router(manager: Shared) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/sticker", post(commit_sticker))
        .route("/sessions/{id}/suggestions", get(suggestions))
        .route("/stickers/{id}/image", get(sticker_image))
        .with_state(manager)
}

pub async fn serve(manager: Shared, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(manager))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
