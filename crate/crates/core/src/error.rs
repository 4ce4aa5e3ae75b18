use std::path::PathBuf;

use thiserror::Error;

use crate::nn::EncoderParams;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// One or more configuration bounds were violated. Every offending key is listed.
    #[error("invalid configuration: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Config(Vec<ConfigViolation>),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("numeric error in {context}: {message}")]
    Numeric { context: String, message: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("{message} (subject {subject}, file {})", path.display())]
    Load {
        subject: String,
        path: PathBuf,
        message: String,
    },

    #[error("missing modality {modality} for subject {subject}")]
    MissingModality { modality: String, subject: String },

    #[error("invalid record {subject}: {message}")]
    InvalidRecord { subject: String, message: String },

    #[error("class {label} has {count} members but k = {k}; use k <= {count}")]
    TooFewForFolds { label: u8, count: usize, k: usize },

    /// Training produced a non-finite loss. Carries the last parameters that
    /// produced a finite loss so the caller can checkpoint them.
    #[error("non-finite loss at {stage} epoch {epoch}")]
    Diverged {
        stage: String,
        epoch: usize,
        last_good: Box<EncoderParams>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn numeric(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape { .. } => "shape",
            Error::Numeric { .. } => "numeric",
            Error::Contract(_) => "contract",
            Error::Load { .. } | Error::MissingModality { .. } | Error::InvalidRecord { .. } => "load",
            Error::TooFewForFolds { .. } => "folds",
            Error::Diverged { .. } => "diverged",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

/// A single violated configuration bound.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConfigViolation {
    pub key: String,
    pub message: String,
}

impl ConfigViolation {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

/// Collects violations and turns them into a single error at the end.
#[derive(Debug, Default)]
pub(crate) struct Violations(Vec<ConfigViolation>);

impl Violations {
    pub fn check(&mut self, ok: bool, key: &str, message: impl Into<String>) {
        if !ok {
            self.0.push(ConfigViolation::new(key, message));
        }
    }

    pub fn extend(&mut self, other: Violations) {
        self.0.extend(other.0);
    }

    pub fn prefixed(mut self, prefix: &str) -> Self {
        for v in &mut self.0 {
            v.key = format!("{prefix}.{}", v.key);
        }
        self
    }

    pub fn into_result(self) -> Result<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(self.0))
        }
    }
}
