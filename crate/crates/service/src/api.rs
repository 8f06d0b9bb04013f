//! HTTP routes. Response bodies are JSON with floats written to 17
//! significant digits.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::ServiceError;
use crate::session::{CreateSession, Registry, SubmitObservation};

/// JSON response rendered with [`wynn_core::format`].
pub struct Sig17Json<T>(pub StatusCode, pub T);

impl<T: Serialize> IntoResponse for Sig17Json<T> {
    fn into_response(self) -> Response {
        match wynn_core::format::to_string(&self.1) {
            Ok(body) => (self.0, [(header::CONTENT_TYPE, "application/json")], body).into_response(),
            Err(e) => ServiceError::from(wynn_core::Error::from(e)).into_response(),
        }
    }
}

fn ok<T: Serialize>(value: T) -> Sig17Json<T> {
    Sig17Json(StatusCode::OK, value)
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))?
}

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/suggest", get(suggest))
        .route("/sessions/{id}/observations", post(submit_observation))
        .route("/sessions/{id}/estimate", get(estimate))
        .route("/sessions/{id}/sensitivity", get(sensitivity))
        .route("/sessions/{id}/history", get(history))
        .with_state(registry)
}

async fn create_session(State(reg): State<Arc<Registry>>, body: Bytes) -> Result<Response, ServiceError> {
    let req: CreateSession = parse(&body)?;
    let view = blocking(move || reg.create(req)).await?;
    Ok(Sig17Json(StatusCode::CREATED, view).into_response())
}

async fn get_session(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(ok(reg.read(&id, |s| Ok(s.view()))?).into_response())
}

async fn suggest(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(ok(reg.read(&id, |s| s.suggest())?).into_response())
}

async fn submit_observation(
    State(reg): State<Arc<Registry>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let req: SubmitObservation = parse(&body)?;
    let view = blocking(move || reg.observe(&id, &req)).await?;
    Ok(ok(view).into_response())
}

async fn estimate(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(ok(reg.read(&id, |s| Ok(s.estimate()))?).into_response())
}

async fn sensitivity(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(ok(reg.read(&id, |s| s.sensitivity())?).into_response())
}

async fn history(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(ok(reg.read(&id, |s| Ok(s.history()))?).into_response())
}

async fn delete_session(State(reg): State<Arc<Registry>>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    blocking(move || reg.delete(&id)).await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}
