use thiserror::Error;

/// Errors raised across the environment, orchestration loop, agents and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("point ({x}, {y}) lies outside the {width}x{height} coordinate space")]
    Range { x: i32, y: i32, width: i32, height: i32 },

    #[error("environment lifecycle: {0}")]
    Lifecycle(String),

    #[error("defect conflict: {0}")]
    Conflict(String),

    #[error("unknown {kind} `{id}`")]
    Lookup { kind: &'static str, id: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("internal invariant violated: {0}")]
    InternalInvariant(String),

    #[error("orchestration aborted: {0}")]
    Orchestration(String),

    #[error("backend `{role}` failed: {message}")]
    Backend { role: &'static str, message: String },

    #[error("protocol violation from `{role}`: {message} (raw: {raw})")]
    Protocol { role: String, message: String, raw: String },

    #[error("remote call to `{role}` timed out after {attempts} attempt(s)")]
    Timeout { role: String, attempts: u32 },

    #[error("synthesis failed: {0}")]
    Synthesis(String),

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("misuse: {0}")]
    Misuse(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("unsupported schema `{found}` (expected `{expected}`)")]
    Schema { expected: &'static str, found: String },

    #[error("bench hash mismatch: trajectories were produced against {recorded}, bench is {actual}")]
    HashMismatch { recorded: String, actual: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn lookup(kind: &'static str, id: impl Into<String>) -> Self {
        Error::Lookup { kind, id: id.into() }
    }

    /// Whether a remote call that failed with this error may be retried.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Timeout { .. })
            || matches!(self, Error::Io(e) if matches!(
                e.kind(),
                std::io::ErrorKind::TimedOut
                    | std::io::ErrorKind::WouldBlock
                    | std::io::ErrorKind::ConnectionRefused
                    | std::io::ErrorKind::ConnectionReset
                    | std::io::ErrorKind::Interrupted
            ))
    }
}
