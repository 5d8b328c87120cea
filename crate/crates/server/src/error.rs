use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use podfact_core::annotation::{ValidationError, WorkflowError};
use podfact_core::dataset::DatasetError;
use podfact_core::store::StoreError;
use serde_json::json;

/// An error rendered as `{"error": {"code", "message", "field"?}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub field: Option<&'static str>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            field: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token")
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<ValidationError> for ApiError {
    fn from(e: ValidationError) -> Self {
        Self {
            field: Some(e.field),
            ..Self::new(StatusCode::BAD_REQUEST, "validation", e.to_string())
        }
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        let message = e.to_string();
        match e {
            WorkflowError::Validation(v) => v.into(),
            WorkflowError::NotAssigned { .. } => Self::new(StatusCode::FORBIDDEN, "not_assigned", message),
            WorkflowError::TaskFull(_) => Self::new(StatusCode::CONFLICT, "task_full", message),
            WorkflowError::AlreadyAssigned { .. } => Self::new(StatusCode::CONFLICT, "already_assigned", message),
            WorkflowError::NotEligible(_) => Self::new(StatusCode::CONFLICT, "not_eligible", message),
            WorkflowError::EmptyEpisode(_) | WorkflowError::Parameter(_) => {
                Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
            }
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::NotFound { .. } | StoreError::Integrity { .. } => Self::not_found(message),
            StoreError::Query(_) => Self::bad_request(message),
            StoreError::Workflow(w) => w.into(),
            StoreError::Conflict(_) => Self::new(StatusCode::CONFLICT, "conflict", message),
            StoreError::Sql(_) | StoreError::Corrupt(_) | StoreError::Io(_) => {
                tracing::error!(error = %message, "store failure");
                Self::internal(message)
            }
        }
    }
}

impl From<DatasetError> for ApiError {
    fn from(e: DatasetError) -> Self {
        Self::bad_request(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let Some(field) = self.field {
            body["field"] = field.into();
        }
        let mut response = (self.status, Json(json!({ "error": body }))).into_response();
        if self.status == StatusCode::UNAUTHORIZED {
            response
                .headers_mut()
                .insert(header::WWW_AUTHENTICATE, header::HeaderValue::from_static("Bearer"));
        }
        response
    }
}
