use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use forge_core::dsl::ParseError;
use forge_core::engine::EngineError;
use forge_core::metrics::MetricsError;
use forge_core::training::TrainError;
use serde::{Deserialize, Serialize};
use serde_json::json;

/// One entry of a 422 body. DSL diagnostics carry a position; request and
/// config problems do not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col: Option<usize>,
    pub message: String,
    pub category: String,
}

impl FieldError {
    pub fn unpositioned(category: &str, message: impl Into<String>) -> Self {
        FieldError {
            line: None,
            col: None,
            message: message.into(),
            category: category.into(),
        }
    }
}

impl From<&ParseError> for FieldError {
    fn from(e: &ParseError) -> Self {
        FieldError {
            line: Some(e.line),
            col: Some(e.column),
            message: e.message.clone(),
            category: e.category.to_string(),
        }
    }
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Conflict(String),
    Invalid(Vec<FieldError>),
    Overflow { node: String, detail: String },
    Internal(String),
}

impl ApiError {
    pub fn invalid(category: &str, message: impl Into<String>) -> Self {
        ApiError::Invalid(vec![FieldError::unpositioned(category, message)])
    }
}

fn overflow_node(e: &TrainError) -> Option<&str> {
    match e {
        TrainError::Engine(EngineError::NumericOverflow(n))
        | TrainError::Metrics(MetricsError::Engine(EngineError::NumericOverflow(n))) => Some(n),
        _ => None,
    }
}

impl From<TrainError> for ApiError {
    fn from(e: TrainError) -> Self {
        if let Some(node) = overflow_node(&e) {
            return ApiError::Overflow {
                node: node.to_string(),
                detail: e.to_string(),
            };
        }
        match e {
            TrainError::Config(m) => ApiError::invalid("config", m),
            TrainError::Incompatible(m) => ApiError::invalid("incompatible", m),
            TrainError::Data(d) => ApiError::invalid("dataset", d.to_string()),
            TrainError::Finished(step) => {
                ApiError::Conflict(format!("session already finished at step {step}"))
            }
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::invalid("request", e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::invalid("request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, json!({ "error": m })),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, json!({ "error": m })),
            ApiError::Invalid(errors) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({ "errors": errors }),
            ),
            ApiError::Overflow { node, detail } => (
                StatusCode::INTERNAL_SERVER_ERROR,
                json!({ "error": "numeric overflow", "node": node, "detail": detail }),
            ),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": m })),
        };
        (status, Json(body)).into_response()
    }
}
