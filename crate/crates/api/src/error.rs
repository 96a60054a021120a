use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use fairlens_core::store::StoreError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors surfaced to HTTP clients and the CLI.
#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{kind} `{id}` not found")]
    NotFound { kind: String, id: String },
    /// The request is well formed JSON but violates the schema or a
    /// semantic constraint. `path` points at the offending field.
    #[error("{}{message}", path.as_deref().map(|p| format!("{p}: ")).unwrap_or_default())]
    Invalid {
        path: Option<String>,
        message: String,
    },
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError::Invalid {
            path: Some(path.into()),
            message: message.into(),
        }
    }

    pub fn not_found(kind: impl Into<String>, id: impl Into<String>) -> Self {
        ApiError::NotFound {
            kind: kind.into(),
            id: id.into(),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound { .. } => StatusCode::NOT_FOUND,
            ApiError::Invalid { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let code = match self {
            ApiError::NotFound { .. } => "not_found",
            ApiError::Invalid { .. } => "invalid_request",
            ApiError::Conflict(_) => "conflict",
            ApiError::Internal(_) => "internal",
        };
        let path = match self {
            ApiError::Invalid { path, .. } => path.clone(),
            _ => None,
        };
        let message = match self {
            ApiError::Invalid { message, .. } => message.clone(),
            other => other.to_string(),
        };
        ErrorBody {
            error: code.into(),
            message,
            path,
        }
    }
}

/// JSON error payload: `{"error": code, "message": ..., "path": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if let ApiError::Internal(msg) = &self {
            tracing::error!(%msg, "request failed");
        }
        (self.status(), Json(self.body())).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound { kind, id } => ApiError::not_found(kind, id),
            StoreError::InvalidId(id) => ApiError::not_found("resource", id),
            StoreError::Busy(id) => {
                ApiError::Conflict(format!("a remedy of `{id}` is already running"))
            }
            StoreError::Dataset(e) => ApiError::Invalid {
                path: None,
                message: e.to_string(),
            },
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<fairlens_core::Error> for ApiError {
    fn from(e: fairlens_core::Error) -> Self {
        match e {
            fairlens_core::Error::Store(s) => s.into(),
            other => ApiError::Invalid {
                path: None,
                message: other.to_string(),
            },
        }
    }
}

macro_rules! invalid_from {
    ($($t:ty),*) => {$(
        impl From<$t> for ApiError {
            fn from(e: $t) -> Self {
                ApiError::Invalid { path: None, message: e.to_string() }
            }
        }
    )*};
}

invalid_from!(
    fairlens_core::dataset::DatasetError,
    fairlens_core::models::ModelError,
    fairlens_core::metrics::MetricError,
    fairlens_core::sampler::SamplerError,
    fairlens_core::explain::ExplainError
);

/// Converts a `serde_path_to_error` failure into a 422 with the field path.
pub fn from_path_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> ApiError {
    let path = e.path().to_string();
    ApiError::Invalid {
        path: Some(if path == "." { String::new() } else { path }),
        message: e.inner().to_string(),
    }
}
