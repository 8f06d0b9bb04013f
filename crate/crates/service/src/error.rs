use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use serde_json::{json, Value};
use wynn_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("unknown session {0}")]
    NotFound(String),

    #[error("stale suggestion_seq {got}; current is {current}")]
    Stale { got: u64, current: u64 },

    #[error("another observation for this session is in progress")]
    Busy,

    #[error("malformed request body: {0}")]
    BadRequest(String),

    #[error("corrupt event log: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::Core(e) => match e {
                CoreError::Sequencing(_) => StatusCode::CONFLICT,
                CoreError::Singular { .. } => StatusCode::UNPROCESSABLE_ENTITY,
                CoreError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
                _ => StatusCode::BAD_REQUEST,
            },
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Stale { .. } | ServiceError::Busy => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Corrupt(_) | ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Core(e) => match e {
                CoreError::Domain { .. } => "domain",
                CoreError::Index { .. } => "index",
                CoreError::Singular { .. } => "singular",
                CoreError::InvalidDesign(_) => "invalid_design",
                CoreError::Argument(_) => "argument",
                CoreError::StartDesign { .. } => "start_design",
                CoreError::Sequencing(_) => "sequencing",
                CoreError::ResponseDomain { .. } => "response_domain",
                CoreError::Validation(_) => "validation",
                CoreError::InsufficientSample { .. } => "insufficient_sample",
                CoreError::Dimension { .. } => "dimension",
                CoreError::Json(_) => "json",
                CoreError::Io(_) => "io",
            },
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Stale { .. } => "stale_suggestion",
            ServiceError::Busy => "busy",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Corrupt(_) => "corrupt_log",
            ServiceError::Io(_) => "io",
        }
    }

    fn details(&self) -> Option<Value> {
        match self {
            ServiceError::Core(CoreError::Validation(report)) => serde_json::to_value(report).ok(),
            ServiceError::Core(CoreError::Singular { lambda_min }) => Some(json!({ "lambda_min": lambda_min })),
            ServiceError::Core(CoreError::StartDesign { rank, p }) => Some(json!({ "rank": rank, "p": p })),
            ServiceError::Stale { got, current } => Some(json!({ "got": got, "current": current })),
            _ => None,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let mut body = json!({ "error": self.code(), "message": self.to_string() });
        if let Some(d) = self.details() {
            body["details"] = d;
        }
        (status, axum::Json(body)).into_response()
    }
}
