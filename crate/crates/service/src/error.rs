use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use pricing_core::model::{ParseError, Violation};
use pricing_core::router::{RouterError, SwapError};
use pricing_core::usage::{StoreError, UsageError};
use serde_json::{json, Value as JsonValue};

/// An error response: `{code, message, violations?}` plus optional extra
/// fields merged into the body.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub violations: Option<Vec<Violation>>,
    pub extra: Option<serde_json::Map<String, JsonValue>>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            violations: None,
            extra: None,
        }
    }

    pub fn with_extra(mut self, extra: serde_json::Map<String, JsonValue>) -> Self {
        self.extra = Some(extra);
        self
    }

    pub fn malformed_body(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "MALFORMED_BODY", message)
    }

    pub fn unknown_subscription(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "UNKNOWN_SUBSCRIPTION", format!("no subscription `{id}`"))
    }

    pub fn validation_failed(violations: Vec<Violation>) -> Self {
        let mut e = Self::new(
            StatusCode::BAD_REQUEST,
            "VALIDATION_FAILED",
            format!("pricing has {} violation(s)", violations.len()),
        );
        e.violations = Some(violations);
        e
    }

    pub fn body(&self) -> JsonValue {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let Some(v) = &self.violations {
            body["violations"] = serde_json::to_value(v).expect("violations serialize");
        }
        if let Some(extra) = &self.extra {
            for (k, v) in extra {
                body[k] = v.clone();
            }
        }
        body
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "STORE_UNAVAILABLE", e.to_string())
    }
}

impl From<ParseError> for ApiError {
    fn from(e: ParseError) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "PARSE_ERROR", e.to_string())
    }
}

impl From<SwapError> for ApiError {
    fn from(e: SwapError) -> Self {
        match e {
            SwapError::ValidationFailed(v) => Self::validation_failed(v),
            stale @ SwapError::StaleVersion { .. } => {
                Self::new(StatusCode::CONFLICT, "STALE_VERSION", stale.to_string())
            }
        }
    }
}

impl From<RouterError> for ApiError {
    fn from(e: RouterError) -> Self {
        match e {
            RouterError::UnknownFeature(_) => Self::new(StatusCode::NOT_FOUND, "UNKNOWN_FEATURE", e.to_string()),
            RouterError::UnknownSubscriptionPlan { .. } => {
                Self::new(StatusCode::CONFLICT, "SUBSCRIPTION_NOT_RESOLVABLE", e.to_string())
            }
            RouterError::Context(_) => Self::new(StatusCode::SERVICE_UNAVAILABLE, "STORE_UNAVAILABLE", e.to_string()),
        }
    }
}

impl From<UsageError> for ApiError {
    fn from(e: UsageError) -> Self {
        let code = match &e {
            UsageError::UnknownLimit(_) => "UNKNOWN_LIMIT",
            UsageError::EntityKeyRequired(_) => "ENTITY_KEY_REQUIRED",
            UsageError::UnexpectedEntityKey(_) => "UNEXPECTED_ENTITY_KEY",
            UsageError::InvalidAmount(_) => "INVALID_AMOUNT",
            UsageError::Resolve(_) => {
                return Self::new(StatusCode::CONFLICT, "SUBSCRIPTION_NOT_RESOLVABLE", e.to_string())
            }
            UsageError::Store(_) => {
                return Self::new(StatusCode::SERVICE_UNAVAILABLE, "STORE_UNAVAILABLE", e.to_string())
            }
        };
        Self::new(StatusCode::BAD_REQUEST, code, e.to_string())
    }
}
