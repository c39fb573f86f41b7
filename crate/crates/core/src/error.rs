use std::fmt;

use thiserror::Error;

/// Pipeline stage that produced a numerical failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    QuantileRegression,
    Missingness,
    WorkingModel,
    Lambda,
    Weights,
    Inference,
    Generator,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::QuantileRegression => "quantile regression",
            Stage::Missingness => "missingness MLE",
            Stage::WorkingModel => "working model",
            Stage::Lambda => "lambda",
            Stage::Weights => "EL weights",
            Stage::Inference => "inference",
            Stage::Generator => "generator",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Malformed or inconsistent input; the caller can fix it.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// A solver or factorization failed on otherwise valid input.
    #[error("{stage} stage failed: {reason}")]
    Numerical { stage: Stage, reason: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(stage: Stage, reason: impl Into<String>) -> Self {
        Error::Numerical {
            stage,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical pipeline, false for input validation errors.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. })
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Numerical { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}
