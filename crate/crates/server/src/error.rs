use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cogtrain_core::data::DataDirError;
use cogtrain_core::lifelog::LifeLogError;
use cogtrain_core::media::MediaError;
use cogtrain_core::puzzle::PuzzleError;
use cogtrain_core::session::StoreError;
use cogtrain_core::SessionError;
use serde_json::json;
use tracing::error;

/// Error body: `{"error": <code>, "message": <text>}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        let message = message.into();
        error!(%message, "internal error");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            SessionError::Puzzle(PuzzleError::GroupNotFound(_)) => (StatusCode::NOT_FOUND, "GroupNotFound"),
            SessionError::Puzzle(PuzzleError::DataSourceEmpty(_)) => (StatusCode::CONFLICT, "DataSourceEmpty"),
            SessionError::Puzzle(_) => return ApiError::internal(message),
            SessionError::Provider(_) => (StatusCode::BAD_GATEWAY, "ProviderError"),
            SessionError::GuardViolation { .. } => (StatusCode::BAD_GATEWAY, "GuardViolation"),
            SessionError::SessionEnded => (StatusCode::CONFLICT, "SessionEnded"),
            SessionError::DrawExpected => (StatusCode::UNPROCESSABLE_ENTITY, "DrawExpected"),
            SessionError::HintBudgetExhausted(_) => (StatusCode::TOO_MANY_REQUESTS, "HintBudgetExhausted"),
            SessionError::NoHintsAvailable => (StatusCode::CONFLICT, "NoHintsAvailable"),
            SessionError::Transcript(_) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidMessage"),
            SessionError::NotFound(_) => (StatusCode::NOT_FOUND, "SessionNotFound"),
            SessionError::Store(StoreError::InvalidId(_)) => (StatusCode::BAD_REQUEST, "InvalidSessionId"),
            SessionError::Store(StoreError::Exists(_)) => (StatusCode::CONFLICT, "SessionExists"),
            SessionError::Store(_) => return ApiError::internal(message),
        };
        ApiError::new(status, code, message)
    }
}

impl From<LifeLogError> for ApiError {
    fn from(e: LifeLogError) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            LifeLogError::EmptyEntry => (StatusCode::BAD_REQUEST, "EmptyEntry"),
            LifeLogError::InvalidRange { .. } => (StatusCode::BAD_REQUEST, "InvalidRange"),
            LifeLogError::UnknownMedia(_) => (StatusCode::UNPROCESSABLE_ENTITY, "UnknownMedia"),
            LifeLogError::FutureTimestamp(_) => (StatusCode::UNPROCESSABLE_ENTITY, "FutureTimestamp"),
            LifeLogError::DataSourceEmpty => (StatusCode::CONFLICT, "DataSourceEmpty"),
            LifeLogError::Io(_) | LifeLogError::Corrupt { .. } => return ApiError::internal(message),
        };
        ApiError::new(status, code, message)
    }
}

impl From<MediaError> for ApiError {
    fn from(e: MediaError) -> Self {
        match e {
            MediaError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "MediaNotFound", e.to_string()),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<DataDirError> for ApiError {
    fn from(e: DataDirError) -> Self {
        ApiError::internal(e.to_string())
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        ApiError::internal(format!("worker task failed: {e}"))
    }
}
