use std::path::PathBuf;

/// Failures with a dedicated exit status. Anything else exits with 1.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),
    #[error("malformed {}: {msg}", .path.display())]
    Malformed { path: PathBuf, msg: String },
    #[error("config out of range: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::MissingInput(_) => 2,
            Failure::Malformed { .. } => 3,
            Failure::Config(_) => 4,
            Failure::Validation(_) => 5,
        }
    }

    pub fn malformed(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Failure::Malformed {
            path: path.into(),
            msg: err.to_string(),
        }
    }
}

/// Exit status for an error chain: the first [`Failure`] found decides.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Failure>())
        .map_or(1, Failure::exit_code)
}
