use std::path::PathBuf;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{message}")]
    Validation { message: String, offenders: Vec<String> },
    #[error("{0} not found")]
    NotFound(String),
    #[error("missing or invalid participant token")]
    Unauthorized,
    #[error("{0}")]
    Conflict(String),
    #[error("not enough annotations: have {count}, need at least {required}")]
    NotEnoughAnnotations { count: usize, required: usize },
    #[error(transparent)]
    Core(#[from] gridlab_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("stored data is corrupt: {0}")]
    Integrity(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> ServiceError {
    ServiceError::Io {
        path: path.into(),
        source,
    }
}

impl ServiceError {
    pub fn validation(message: impl Into<String>, offenders: Vec<String>) -> Self {
        Self::Validation {
            message: message.into(),
            offenders,
        }
    }

    pub fn status(&self) -> StatusCode {
        use gridlab_core::Error as E;
        match self {
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::Validation { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::Unauthorized => StatusCode::UNAUTHORIZED,
            Self::Conflict(_) | Self::NotEnoughAnnotations { .. } => StatusCode::CONFLICT,
            Self::Core(E::UnknownBlock(_) | E::DataIntegrity(_) | E::UndefinedMetric(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Self::Core(e) if e.is_input() => StatusCode::BAD_REQUEST,
            Self::Core(_) | Self::Io { .. } | Self::Integrity(_) | Self::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }

    fn code(&self) -> &'static str {
        use gridlab_core::Error as E;
        match self {
            Self::BadRequest(_) => "bad_request",
            Self::Validation { .. } => "validation",
            Self::NotFound(_) => "not_found",
            Self::Unauthorized => "unauthorized",
            Self::Conflict(_) => "conflict",
            Self::NotEnoughAnnotations { .. } => "not_enough_annotations",
            Self::Core(E::UndefinedMetric(_)) => "undefined_metric",
            Self::Core(E::UnknownBlock(_) | E::DataIntegrity(_)) => "validation",
            Self::Core(e) if e.is_input() => "invalid_input",
            Self::Core(_) | Self::Io { .. } | Self::Integrity(_) | Self::Internal(_) => "internal",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let mut body = json!({ "error": { "code": self.code(), "message": self.to_string() } });
        match &self {
            Self::Validation { offenders, .. } if !offenders.is_empty() => {
                body["error"]["offenders"] = json!(offenders);
            }
            Self::NotEnoughAnnotations { count, required } => {
                body["error"]["count"] = json!(count);
                body["error"]["required"] = json!(required);
            }
            _ => {}
        }
        (status, Json(body)).into_response()
    }
}
