use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {context}: {message}")]
    Shape { context: String, message: String },

    #[error("non-finite value in block `{block}`")]
    NonFinite { block: String },

    #[error("divergence at descent step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("label {label} out of range for {num_classes} classes")]
    Label { label: usize, num_classes: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("exemplar counts are not balanced; offending classes: {classes:?}")]
    Balance { classes: Vec<usize> },

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("memory budget exhausted: {0}")]
    BudgetExhausted(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("outer epoch {epoch}: {source}")]
    Epoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("phase {phase}: {source}")]
    Phase {
        phase: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn in_phase(self, phase: usize) -> Self {
        Error::Phase {
            phase,
            source: Box::new(self),
        }
    }

    pub fn in_epoch(self, epoch: usize) -> Self {
        Error::Epoch {
            epoch,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping phase/epoch wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Phase { source, .. } | Error::Epoch { source, .. } => source.root(),
            other => other,
        }
    }

    /// Whether the root cause is numerical (divergence or non-finite values).
    pub fn is_numeric_failure(&self) -> bool {
        matches!(self.root(), Error::Divergence { .. } | Error::NonFinite { .. })
    }
}
