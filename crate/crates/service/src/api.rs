//! HTTP routes.
//!
//! | method | path                              | notes                         |
//! |--------|-----------------------------------|-------------------------------|
//! | POST   | /sessions                         | 201; 422 on bad inputs        |
//! | GET    | /sessions                         |                               |
//! | GET    | /sessions/{id}                    |                               |
//! | GET    | /sessions/{id}/instances?page=&page_size= | page is 0-based       |
//! | GET    | /sessions/{id}/task-explanation?top_k=    |                       |
//! | POST   | /sessions/{id}/feedback           | 422 on invalid ops            |
//! | GET    | /sessions/{id}/feedback           | log and live ops              |
//! | POST   | /sessions/{id}/retrain            | 202; 409 running; 412 no log  |
//! | GET    | /sessions/{id}/status             |                               |
//! | GET    | /sessions/{id}/export             | model archive bytes           |
//!
//! Reads, feedback and export return 409 while the session retrains.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::error::{ApiError, ApiResult};
use crate::session::{
    start_retrain, AppState, CreateSession, FeedbackRequest, RetrainRequest, DEFAULT_PAGE_SIZE,
};

pub const DEFAULT_TOP_K: usize = 20;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_summary))
        .route("/sessions/{id}/instances", get(instances))
        .route("/sessions/{id}/task-explanation", get(task_explanation))
        .route("/sessions/{id}/feedback", post(post_feedback).get(get_feedback))
        .route("/sessions/{id}/retrain", post(retrain))
        .route("/sessions/{id}/status", get(status))
        .route("/sessions/{id}/export", get(export))
        .with_state(state)
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(e.to_string()))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: CreateSession = serde_json::from_slice(&body).map_err(|e| ApiError::invalid(e.to_string()))?;
    let session = blocking(move || state.create(req)).await?;
    Ok((StatusCode::CREATED, Json(session.summary())))
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    Json(state.list())
}

async fn session_summary(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(state.get(&id)?.summary()))
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    page: Option<usize>,
    page_size: Option<usize>,
}

async fn instances(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<PageQuery>,
) -> ApiResult<impl IntoResponse> {
    let session = state.get(&id)?;
    let page = blocking(move || {
        session.instances(q.page.unwrap_or(0), q.page_size.unwrap_or(DEFAULT_PAGE_SIZE))
    })
    .await?;
    Ok(Json(page))
}

#[derive(Debug, Deserialize)]
struct TopKQuery {
    top_k: Option<usize>,
}

async fn task_explanation(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<TopKQuery>,
) -> ApiResult<impl IntoResponse> {
    let session = state.get(&id)?;
    let view = blocking(move || session.task_explanation(q.top_k.unwrap_or(DEFAULT_TOP_K))).await?;
    Ok(Json(view))
}

async fn post_feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let session = state.get(&id)?;
    let req: FeedbackRequest = serde_json::from_slice(&body).map_err(|e| ApiError::invalid(e.to_string()))?;
    let ack = blocking(move || session.post_feedback(req)).await?;
    Ok(Json(ack))
}

async fn get_feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(state.get(&id)?.feedback()))
}

async fn retrain(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let session = state.get(&id)?;
    let req: RetrainRequest = parse_body(&body)?;
    let accepted = start_retrain(session, req)?;
    Ok((StatusCode::ACCEPTED, Json(accepted)))
}

async fn status(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(state.get(&id)?.status()))
}

async fn export(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let session = state.get(&id)?;
    let bytes = blocking(move || session.export()).await?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_string()),
            (
                header::CONTENT_DISPOSITION,
                format!("attachment; filename=\"{id}.bin\""),
            ),
        ],
        bytes,
    ))
}
