//! Routes under `/api/v1` plus `/healthz`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::error::ServiceError;
use crate::sessions::SessionService;
use crate::types::{BankDefinition, CreateSessionRequest, SubmitRequest};

type Shared = State<Arc<SessionService>>;

/// Parses a JSON body; malformed or mistyped bodies are validation errors.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::Validation(format!("invalid request body: {e}")))
}

pub fn router(service: Arc<SessionService>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/api/v1/banks", get(list_banks))
        .route("/api/v1/banks/{id}", put(put_bank))
        .route("/api/v1/sessions", post(create_session))
        .route("/api/v1/sessions/{id}", get(get_session))
        .route("/api/v1/sessions/{id}/next", get(next_question))
        .route("/api/v1/sessions/{id}/responses", post(submit))
        .route("/api/v1/sessions/{id}/report", get(report))
        .with_state(service)
}

async fn healthz() -> impl IntoResponse {
    Json(json!({ "status": "ok" }))
}

async fn list_banks(State(service): Shared) -> impl IntoResponse {
    Json(service.list_banks())
}

async fn put_bank(State(service): Shared, Path(id): Path<String>, body: Bytes) -> Result<impl IntoResponse, ServiceError> {
    let def: BankDefinition = parse(&body)?;
    let created = service.put_bank(&id, &def)?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(json!({ "id": id, "num_questions": def.questions.len() }))))
}

async fn create_session(State(service): Shared, body: Bytes) -> Result<impl IntoResponse, ServiceError> {
    let request: CreateSessionRequest = parse(&body)?;
    Ok((StatusCode::CREATED, Json(service.create_session(request)?)))
}

async fn get_session(State(service): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(service.descriptor(&id)?))
}

async fn next_question(State(service): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(service.next(&id)?))
}

async fn submit(State(service): Shared, Path(id): Path<String>, body: Bytes) -> Result<impl IntoResponse, ServiceError> {
    let request: SubmitRequest = parse(&body)?;
    Ok(Json(service.submit(&id, request)?))
}

async fn report(State(service): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ServiceError> {
    Ok(Json(service.report(&id)?))
}
