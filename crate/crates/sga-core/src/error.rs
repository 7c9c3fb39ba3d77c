//! Crate-wide error type. CLI exit codes are derived from the variant.

use thiserror::Error;

pub type SgaResult<T> = Result<T, SgaError>;

#[derive(Debug, Error)]
pub enum SgaError {
    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse: {path}: {msg}")]
    Parse { path: String, msg: String },

    /// Valid syntax, invalid content: dangling indices, ordering violations,
    /// degenerate boxes. `frame` is the frame_index when one is at fault.
    #[error("corpus: video {video}{}: {msg}", frame.map(|f| format!(" frame {f}")).unwrap_or_default())]
    Corpus {
        video: String,
        frame: Option<usize>,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    /// Checkpoint/corpus mismatches: taxonomy sizes, format version, model kind.
    #[error("incompatible: {0}")]
    Incompatible(String),

    /// Shape or usage violation in the differentiable stack, named after the op.
    #[error("contract: {op}: {msg}")]
    Contract { op: &'static str, msg: String },

    #[error("non-finite value: {context}")]
    NonFinite { context: String },
}

impl SgaError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SgaError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        SgaError::Contract {
            op,
            msg: msg.into(),
        }
    }

    /// Process exit code: 1 io/parse, 2 config/contract, 3 incompatibility, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            SgaError::Io { .. } | SgaError::Parse { .. } => 1,
            SgaError::Config(_) | SgaError::Contract { .. } => 2,
            SgaError::Corpus { .. } | SgaError::Incompatible(_) => 3,
            SgaError::NonFinite { .. } => 4,
        }
    }
}
