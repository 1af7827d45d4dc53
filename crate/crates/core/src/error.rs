use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("artifact format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    Shape { expected: usize, got: usize, context: &'static str },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("particle degeneracy at t={t} in sequence {seq} (all weights underflowed)")]
    Degeneracy { t: usize, seq: usize },

    #[error("simulation diverged: {stage}")]
    Divergence { stage: String },

    #[error("trajectory design infeasible: {0}")]
    DoeInfeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 usage/config, 3 missing artifact,
    /// 4 numerical failure, 5 infeasible trajectory design.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape { .. } => 2,
            Error::MissingArtifact(_) | Error::Format { .. } | Error::Io(_) => 3,
            Error::Numerical(_) | Error::Degeneracy { .. } | Error::Divergence { .. } => 4,
            Error::DoeInfeasible(_) => 5,
        }
    }
}
