use thiserror::Error;

/// Errors raised by the filter, the grid oracle and the scenario tooling.
#[derive(Debug, Error)]
pub enum HbfError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    /// A covariance failed Cholesky even after jitter, or a normalizer underflowed.
    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: String, detail: String },

    #[error("degenerate mixture: total weight {total} is not positive")]
    DegenerateMixture { total: f64 },

    /// The received data cannot be explained by the configured models.
    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("grid resolution error: {0}")]
    Resolution(String),

    #[error("oracle requires scalar models (n = m = p = 1), got n={n}, m={m}, p={p}")]
    OracleRequiresScalar { n: usize, m: usize, p: usize },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<HbfError>,
    },

    #[error("trial {trial}: {source}")]
    AtTrial {
        trial: usize,
        #[source]
        source: Box<HbfError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HbfError {
    pub(crate) fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        HbfError::Numerical {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        HbfError::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        HbfError::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping step/trial annotations.
    pub fn root(&self) -> &HbfError {
        match self {
            HbfError::AtStep { source, .. } | HbfError::AtTrial { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for configuration problems (CLI exit code 1).
    pub fn is_config_error(&self) -> bool {
        matches!(
            self.root(),
            HbfError::InvalidConfig { .. }
                | HbfError::OracleRequiresScalar { .. }
                | HbfError::Io(_)
                | HbfError::Json(_)
                | HbfError::DimensionMismatch { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, HbfError>;
