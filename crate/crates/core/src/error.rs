use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("value iteration diverged after {iterations} sweeps (sup-norm step {last_step})")]
    Divergence { iterations: usize, last_step: f64 },

    #[error("policy iteration did not stabilize within {max_iters} iterations")]
    NonConvergence {
        max_iters: usize,
        trace: Vec<crate::oapi::TraceEntry>,
    },

    #[error("exhaustive enumeration needs {count} policies, limit is {limit}")]
    TooLarge { count: u128, limit: u128 },

    #[error("tape was recorded against a different network state")]
    StaleTape,

    #[error("non-finite gradient in parameter block {block}")]
    NonFiniteGradient { block: String },

    #[error("non-finite {quantity} at step {step}")]
    NonFiniteLoss { step: usize, quantity: String },

    #[error("environment contract violated: {0}")]
    EnvContract(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate baseline: z0 == z1 == {0}")]
    DegenerateBaseline(f64),

    #[error("missing baseline {0}")]
    MissingBaseline(&'static str),

    #[error("environment mismatch: checkpoint is for {checkpoint}, config names {config}")]
    EnvMismatch { checkpoint: String, config: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("property check failed: {0}")]
    Verification(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::EnvMismatch { .. }
            | Error::CheckpointVersion { .. }
            | Error::MissingBaseline(_)
            | Error::Json(_)
            | Error::Layout(_)
            | Error::InvalidModel(_)
            | Error::TooLarge { .. }
            | Error::Io { .. } => 2,
            Error::NonConvergence { .. } => 4,
            _ => 3,
        }
    }
}
