use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure surfaced by the framework.
///
/// The variants follow the error categories shared by the wire protocol and
/// the CLI exit codes: validation-style errors are the caller's fault, the
/// rest are runtime failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("authentication failed: {0}")]
    AuthFailed(String),

    #[error("routing error: {0}")]
    Routing(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    /// A detection backend could not produce a result for a frame. Retryable.
    #[error("detection failed for frame {frame_id}: {reason}")]
    DetectionFailed { frame_id: String, reason: String },

    /// The remote end answered, but not in the expected shape.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A transient failure on the way to the cloud; callers may retry.
    #[error("service unavailable: {0}")]
    Unavailable(String),

    #[error("delivery failed for event {event_id} after {attempts} attempts")]
    DeliveryFailed { event_id: String, attempts: u32 },

    #[error("handler {handler} failed: {reason}")]
    Handler { handler: String, reason: String },

    #[error("experiment aborted: {reason}")]
    Experiment {
        reason: String,
        trace_dump: Option<PathBuf>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad input rather than by the runtime.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Dataset(_) | Error::Json(_) | Error::Io { .. }
        )
    }

    /// True for failures a caller is allowed to retry.
    pub fn is_transient(&self) -> bool {
        matches!(self, Error::Unavailable(_) | Error::DetectionFailed { .. })
    }

    /// Stable machine-readable name used in wire error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Conflict(_) => "conflict",
            Error::NotFound(_) => "not_found",
            Error::AuthFailed(_) => "auth_failed",
            Error::Routing(_) => "routing",
            Error::Dataset(_) => "dataset",
            Error::DetectionFailed { .. } => "detection_failed",
            Error::Protocol(_) | Error::Json(_) => "protocol",
            Error::Unavailable(_) => "unavailable",
            Error::DeliveryFailed { .. } => "delivery_failed",
            Error::Handler { .. } => "handler",
            Error::Experiment { .. } => "experiment",
            Error::Io { .. } | Error::Csv(_) => "io",
        }
    }

    /// HTTP status equivalent for the gateway.
    pub fn status(&self) -> u16 {
        match self {
            Error::Validation(_) | Error::Dataset(_) | Error::Routing(_) => 400,
            Error::Protocol(_) | Error::Json(_) => 400,
            Error::AuthFailed(_) => 401,
            Error::NotFound(_) => 404,
            Error::Conflict(_) => 409,
            Error::Unavailable(_) | Error::DetectionFailed { .. } => 503,
            _ => 500,
        }
    }
}
