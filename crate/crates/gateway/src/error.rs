use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use cornet_core::allocator::AllocError;
use cornet_core::chanem::ChanemError;
use cornet_core::datamgr::DataError;
use cornet_core::inventory::InventoryError;
use cornet_core::scheduler::{RecoveryError, SchedError};
use cornet_core::specvirt::SpecVirtError;

/// Error body of every failed request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

/// HTTP status for a domain error name.
pub fn status_for(name: &str) -> StatusCode {
    match name {
        "Unauthorized" => StatusCode::UNAUTHORIZED,
        "Forbidden" => StatusCode::FORBIDDEN,
        "NotFound" => StatusCode::NOT_FOUND,
        "StateError" | "SealedError" | "OrderError" | "ConflictError" => StatusCode::CONFLICT,
        "CapacityError" | "AllocationError" | "NoFitError" | "PlacementError" => StatusCode::UNPROCESSABLE_ENTITY,
        "JournalError" | "IoError" | "RecoveryError" | "InternalError" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl ApiError {
    pub fn new(name: &str, message: impl Into<String>) -> ApiError {
        ApiError {
            status: status_for(name),
            body: ErrorBody {
                error: name.to_string(),
                message: message.into(),
            },
        }
    }

    pub fn not_found(what: impl Into<String>) -> ApiError {
        ApiError::new("NotFound", what)
    }

    pub fn forbidden(what: impl Into<String>) -> ApiError {
        ApiError::new("Forbidden", what)
    }

    pub fn state(what: impl Into<String>) -> ApiError {
        ApiError::new("StateError", what)
    }

    pub fn validation(what: impl Into<String>) -> ApiError {
        ApiError::new("ValidationError", what)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", self.status.as_u16(), self.body.error, self.body.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<SchedError> for ApiError {
    fn from(e: SchedError) -> ApiError {
        let name = match &e {
            SchedError::Allocation(a) => alloc_name(a),
            other => other.name(),
        };
        ApiError::new(name, e.to_string())
    }
}

fn alloc_name(e: &AllocError) -> &'static str {
    match e {
        AllocError::Exhausted { .. } => "AllocationError",
        AllocError::NoFit { .. } => "NoFitError",
        AllocError::Placement(_) => "PlacementError",
        AllocError::State { .. } => "StateError",
    }
}

impl From<DataError> for ApiError {
    fn from(e: DataError) -> ApiError {
        ApiError::new(e.name(), e.to_string())
    }
}

impl From<ChanemError> for ApiError {
    fn from(e: ChanemError) -> ApiError {
        ApiError::new(e.name(), e.to_string())
    }
}

impl From<SpecVirtError> for ApiError {
    fn from(e: SpecVirtError) -> ApiError {
        let msg = e.to_string();
        let name = msg.split(':').next().unwrap_or("SpecVirtError").to_string();
        ApiError::new(&name, msg)
    }
}

impl From<InventoryError> for ApiError {
    fn from(e: InventoryError) -> ApiError {
        let name = match e {
            InventoryError::Parse(_) => "ParseError",
            InventoryError::Validation { .. } => "ValidationError",
            InventoryError::Io(_) => "IoError",
        };
        ApiError::new(name, e.to_string())
    }
}

impl From<RecoveryError> for ApiError {
    fn from(e: RecoveryError) -> ApiError {
        ApiError::new("RecoveryError", e.to_string())
    }
}
