//! HTTP prediction service.
//!
//! `POST /predict` takes one interaction record (any `label` is ignored) and
//! returns `{probability, decision, threshold, model_version}`.
//! `GET /healthz` reports the loaded model version.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::domain::{validate_query, RawInteraction};
use crate::error::Error;
use crate::model::Predictor;

/// Request bodies above this size are rejected with 413.
pub const MAX_BODY_BYTES: usize = 64 * 1024;

#[derive(Debug)]
pub struct ServiceState {
    pub predictor: Predictor,
    pub model_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub probability: f64,
    pub decision: u8,
    pub threshold: f64,
    pub model_version: String,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

fn error_response(status: StatusCode, message: String) -> Response {
    (status, Json(ErrorBody { error: message })).into_response()
}

fn status_of(e: &Error) -> StatusCode {
    match e {
        Error::Validation(_)
        | Error::Parse { .. }
        | Error::InvalidArgument(_)
        | Error::SequenceTooLong { .. }
        | Error::Json(_) => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

/// Scores one request body exactly as the library would.
pub fn predict_body(state: &ServiceState, body: &[u8]) -> Result<PredictResponse, Error> {
    let text = std::str::from_utf8(body).map_err(|_| Error::Validation(vec!["body is not UTF-8".into()]))?;
    let raw = RawInteraction::from_json(text)?;
    let query = validate_query(raw, state.predictor.features.uses_products())?;
    let p = state.predictor.predict(&query)?;
    Ok(PredictResponse {
        probability: p.probability,
        decision: p.decision,
        threshold: state.predictor.threshold,
        model_version: state.model_version.clone(),
    })
}

async fn predict_handler(State(state): State<Arc<ServiceState>>, body: Bytes) -> Response {
    let result = tokio::task::spawn_blocking(move || predict_body(&state, &body)).await;
    match result {
        Ok(Ok(r)) => Json(r).into_response(),
        Ok(Err(e)) => error_response(status_of(&e), e.to_string()),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")),
    }
}

async fn healthz(State(state): State<Arc<ServiceState>>) -> Response {
    Json(serde_json::json!({
        "status": "ok",
        "model_version": state.model_version,
    }))
    .into_response()
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/predict", post(predict_handler))
        .route("/healthz", get(healthz))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Serves on an already-bound listener until the future is dropped.
pub async fn serve(listener: TcpListener, state: Arc<ServiceState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Binds `addr` and serves on a background task of the current runtime,
/// returning the bound address.
pub async fn spawn(addr: SocketAddr, state: Arc<ServiceState>) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(serve(listener, state))))
}
