use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uiloc_core::codeloc::CodeLocError;
use uiloc_core::experiment::ExperimentError;
use uiloc_core::retrieval::RetrievalError;

/// JSON error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("project {0:?} not found")]
    ProjectNotFound(String),
    #[error("bug {0:?} not found")]
    BugNotFound(String),
    #[error("OB {0:?} not found")]
    ObNotFound(String),
    #[error("screen {0:?} not found")]
    ScreenNotFound(String),
    #[error("screen {0:?} has no screenshot")]
    ScreenshotNotFound(String),
    #[error("session {0:?} not found")]
    SessionNotFound(String),
    #[error("screens not in the session ranking: {}", .0.join(", "))]
    ScreenNotInRanking(Vec<String>),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("project could not be loaded: {0}")]
    IngestFailed(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::ProjectNotFound(_) => "ProjectNotFound",
            ApiError::BugNotFound(_) => "BugNotFound",
            ApiError::ObNotFound(_) => "ObNotFound",
            ApiError::ScreenNotFound(_) => "ScreenNotFound",
            ApiError::ScreenshotNotFound(_) => "ScreenshotNotFound",
            ApiError::SessionNotFound(_) => "SessionNotFound",
            ApiError::ScreenNotInRanking(_) => "ScreenNotInRanking",
            ApiError::InvalidRequest(_) => "InvalidRequest",
            ApiError::ScorerUnavailable(_) => "ScorerUnavailable",
            ApiError::IngestFailed(_) => "IngestFailed",
            ApiError::Unprocessable(_) => "Unprocessable",
            ApiError::Internal(_) => "Internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::ProjectNotFound(_)
            | ApiError::BugNotFound(_)
            | ApiError::ObNotFound(_)
            | ApiError::ScreenNotFound(_)
            | ApiError::ScreenshotNotFound(_)
            | ApiError::SessionNotFound(_) => StatusCode::NOT_FOUND,
            ApiError::ScreenNotInRanking(_) => StatusCode::CONFLICT,
            ApiError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::ScorerUnavailable(_)
            | ApiError::IngestFailed(_)
            | ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn detail(&self) -> serde_json::Value {
        match self {
            ApiError::ScreenNotInRanking(ids) => serde_json::json!({ "screen_ids": ids }),
            ApiError::ProjectNotFound(id)
            | ApiError::BugNotFound(id)
            | ApiError::ObNotFound(id)
            | ApiError::ScreenNotFound(id)
            | ApiError::ScreenshotNotFound(id)
            | ApiError::SessionNotFound(id) => serde_json::json!({ "id": id }),
            _ => serde_json::Value::Null,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            tracing::error!("{self}");
        }
        let body = ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
            detail: self.detail(),
        };
        (self.status(), Json(body)).into_response()
    }
}

impl From<RetrievalError> for ApiError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Unavailable(_)
            | RetrievalError::MissingEmbedding(_)
            | RetrievalError::UnknownScorer(_) => ApiError::ScorerUnavailable(e.to_string()),
            RetrievalError::EmptyScreen(_)
            | RetrievalError::ZeroVector(_)
            | RetrievalError::QueryDim { .. } => ApiError::Unprocessable(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<CodeLocError> for ApiError {
    fn from(e: CodeLocError) -> Self {
        match e {
            CodeLocError::Retrieval(r) => r.into(),
            CodeLocError::InvalidConfig(m) => ApiError::InvalidRequest(m),
            CodeLocError::Io(..) | CodeLocError::Eval(_) => ApiError::Internal(e.to_string()),
            other => ApiError::Unprocessable(other.to_string()),
        }
    }
}

impl From<ExperimentError> for ApiError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Retrieval(r) => r.into(),
            ExperimentError::UnknownTask(_) => ApiError::InvalidRequest(e.to_string()),
            ExperimentError::Eval(_) => ApiError::InvalidRequest(e.to_string()),
        }
    }
}
