use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: node index {index} out of range for n = {n}")]
    OutOfRange { line: usize, index: usize, n: usize },

    #[error("line {line}: self-loop on node {node} is not allowed")]
    SelfLoop { line: usize, node: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("centrality series diverged at depth {depth}")]
    Divergence { depth: usize },

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("rank deficient regressors: {detail} [columns: {}]", columns.join(", "))]
    RankDeficient {
        columns: Vec<String>,
        detail: String,
    },

    #[error("singular matrix: {0}")]
    Singular(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl Error {
    /// Process exit code for command-line use: 2 for bad input, 3 for
    /// non-convergence, 4 for identification failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } | Error::NonConvergence { .. } => 3,
            Error::RankDeficient { .. } | Error::Singular(_) => 4,
            _ => 2,
        }
    }
}
