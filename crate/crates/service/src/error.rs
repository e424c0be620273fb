use std::time::Duration;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use pandemon_core::{EstimationError, PanelError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{kind} `{id}` not found")]
    NotFound { kind: &'static str, id: String },
    #[error("{message}")]
    BadRequest {
        message: String,
        field: Option<String>,
        row: Option<usize>,
    },
    #[error("request did not finish within {0:?}")]
    Timeout(Duration),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::BadRequest {
            message: message.into(),
            field: Some(field.into()),
            row: None,
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            Self::NotFound { .. } => StatusCode::NOT_FOUND,
            Self::BadRequest { .. } => StatusCode::BAD_REQUEST,
            Self::Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
            Self::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<PanelError> for ServiceError {
    fn from(e: PanelError) -> Self {
        Self::BadRequest {
            row: e.row(),
            message: e.to_string(),
            field: None,
        }
    }
}

impl From<EstimationError> for ServiceError {
    fn from(e: EstimationError) -> Self {
        match e {
            EstimationError::Panel(p) => p.into(),
            other => Self::BadRequest {
                message: other.to_string(),
                field: None,
                row: None,
            },
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    row: Option<usize>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        let (field, row) = match &self {
            Self::BadRequest { field, row, .. } => (field.clone(), *row),
            _ => (None, None),
        };
        let body = ErrorBody {
            error: self.to_string(),
            field,
            row,
        };
        (status, Json(body)).into_response()
    }
}
