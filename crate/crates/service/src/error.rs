use crate::session::HandleError;
use crate::state::LookupError;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use reasonweave_core::chain::NodeId;
use reasonweave_core::engine::EngineError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ids: Vec<NodeId>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                ids: Vec::new(),
            },
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "ValidationError", message)
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or invalid bearer token")
    }
}

/// HTTP status for each engine error code.
pub fn status_for(e: &EngineError) -> StatusCode {
    match e {
        EngineError::UnknownId(_) => StatusCode::NOT_FOUND,
        EngineError::InvalidPhase { .. } | EngineError::NotAwaitingFeedback(_) | EngineError::FeedbackPending(_) => {
            StatusCode::CONFLICT
        }
        EngineError::EmptyPrompt | EngineError::InvalidTarget { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        EngineError::Provider(_) | EngineError::Fixture(_) => StatusCode::BAD_GATEWAY,
        EngineError::Prompt(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ApiError {
            status: status_for(&e),
            body: ErrorBody {
                code: e.code().into(),
                message: e.to_string(),
                ids: e.ids(),
            },
        }
    }
}

impl From<HandleError> for ApiError {
    fn from(e: HandleError) -> Self {
        match e {
            HandleError::Engine(e) => e.into(),
            HandleError::Closed(id) => {
                Self::new(StatusCode::SERVICE_UNAVAILABLE, "SessionClosed", format!("session {id} is shutting down"))
            }
        }
    }
}

impl From<LookupError> for ApiError {
    fn from(e: LookupError) -> Self {
        match e {
            LookupError::Unknown(_) => Self::new(StatusCode::NOT_FOUND, "UnknownSession", e.to_string()),
            LookupError::Store(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "StoreError", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
