//! Mapping of platform errors onto HTTP statuses and a uniform JSON body:
//! `{"error": {"kind": ..., "message": ...}}`.

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use fedplane_core::error::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub enum ApiError {
    Core(Error),
    /// Rejected before reaching the platform: bad JSON, path, query or an
    /// oversized body.
    Request { status: StatusCode, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

pub type ApiResult<T> = Result<T, ApiError>;

/// Status and stable kind name for each error variant.
pub fn classify(err: &Error) -> (StatusCode, &'static str) {
    match err {
        Error::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
        Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
        Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
        Error::Unauthenticated(_) => (StatusCode::UNAUTHORIZED, "unauthenticated"),
        Error::Forbidden(_) => (StatusCode::FORBIDDEN, "forbidden"),
        Error::InvalidState(_) => (StatusCode::CONFLICT, "invalid_state"),
        Error::Unsupported(_) => (StatusCode::BAD_REQUEST, "unsupported"),
        Error::NotImplemented(_) => (StatusCode::NOT_IMPLEMENTED, "not_implemented"),
        Error::PayloadTooLarge { .. } => (StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large"),
        Error::Busy(_) => (StatusCode::CONFLICT, "busy"),
        Error::Decryption => (StatusCode::INTERNAL_SERVER_ERROR, "decryption"),
        Error::PipelineNode { .. } => (StatusCode::BAD_GATEWAY, "pipeline_node"),
        Error::Upstream(_) => (StatusCode::BAD_GATEWAY, "upstream"),
        Error::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
    }
}

impl ApiError {
    pub fn rejected(status: StatusCode, message: impl Into<String>) -> Self {
        let status = if status == StatusCode::PAYLOAD_TOO_LARGE { status } else { StatusCode::BAD_REQUEST };
        ApiError::Request { status, message: message.into() }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Core(e) => classify(e).0,
            ApiError::Request { status, .. } => *status,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let (kind, message) = match self {
            ApiError::Core(e) => (classify(e).1, e.to_string()),
            ApiError::Request { status, message } if *status == StatusCode::PAYLOAD_TOO_LARGE => {
                ("payload_too_large", message.clone())
            }
            ApiError::Request { message, .. } => ("bad_request", message.clone()),
        };
        ErrorBody {
            error: ErrorDetail {
                kind: kind.into(),
                message,
            },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Core(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::rejected(r.status(), r.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(r: PathRejection) -> Self {
        ApiError::rejected(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::rejected(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn credential_and_tier_errors_are_distinct() {
        assert_eq!(classify(&Error::Unauthenticated("x".into())).0, StatusCode::UNAUTHORIZED);
        assert_eq!(classify(&Error::Forbidden("x".into())).0, StatusCode::FORBIDDEN);
        assert_eq!(classify(&Error::NotFound("x".into())).0, StatusCode::NOT_FOUND);
    }

    #[test]
    fn body_carries_kind_and_message() {
        let body = ApiError::from(Error::Busy("run".into())).body();
        assert_eq!(body.error.kind, "busy");
        assert_eq!(body.error.message, "busy: run");
    }
}
