use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use crate::bench::BenchError;
use crate::chat::ChatError;

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// Stable machine-readable kind, e.g. `UnknownSession`.
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            kind,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}: {}", self.kind, self.message);
        }
        let body = ErrorBody {
            error: self.kind.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<BenchError> for ApiError {
    fn from(e: BenchError) -> ApiError {
        let (status, kind) = match &e {
            BenchError::InvalidPairCount => (StatusCode::BAD_REQUEST, "InvalidPairCount"),
            BenchError::InsufficientMatchedPairs { .. } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "InsufficientMatchedPairs")
            }
            BenchError::UnknownSession(_) => (StatusCode::NOT_FOUND, "UnknownSession"),
            BenchError::InvalidCriterion(_) => (StatusCode::BAD_REQUEST, "InvalidCriterion"),
            BenchError::InvalidPairIndex { .. } => (StatusCode::BAD_REQUEST, "InvalidPairIndex"),
            BenchError::NoJudgments => (StatusCode::NOT_FOUND, "NoJudgments"),
            BenchError::Records(_) => (StatusCode::BAD_REQUEST, "InvalidRecords"),
            BenchError::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Storage"),
        };
        ApiError::new(status, kind, e.to_string())
    }
}

impl From<ChatError> for ApiError {
    fn from(e: ChatError) -> ApiError {
        let (status, kind) = match &e {
            ChatError::UnknownSession(_) => (StatusCode::NOT_FOUND, "UnknownSession"),
            ChatError::UnknownRecommender(_) => (StatusCode::BAD_REQUEST, "UnknownRecommender"),
            ChatError::SessionEnded(_) => (StatusCode::CONFLICT, "SessionEnded"),
            ChatError::IllegalAction(_) => (StatusCode::BAD_REQUEST, "IllegalAction"),
            ChatError::InvalidTurn(_) => (StatusCode::BAD_REQUEST, "InvalidTurn"),
            ChatError::BackendUnavailable(_) => (StatusCode::BAD_GATEWAY, "BackendUnavailable"),
            ChatError::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Storage"),
        };
        ApiError::new(status, kind, e.to_string())
    }
}
