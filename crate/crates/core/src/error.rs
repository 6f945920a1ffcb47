//! Crate-wide error type.
//!
//! Variants are grouped by failure class so the CLI can map them onto
//! exit codes (config = 2, numeric = 3, io = 4).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A non-finite value surfaced during a numeric computation.
    #[error("numeric failure in {context}: {detail}")]
    NumericFailure { context: String, detail: String },

    /// Differentiation past the supported nesting depth.
    #[error("gradient nesting depth exceeded: depth > 2 is unsupported (requested order {requested})")]
    DepthExceeded { requested: u8 },

    /// Structure with zero atoms.
    #[error("empty structure: at least one atom is required")]
    EmptyStructure,

    /// Atomic numbers outside the active species registry.
    #[error("species mismatch: atomic number {z} is not in the registry {registry:?}")]
    SpeciesMismatch { z: u32, registry: Vec<u32> },

    /// Uncertainty scheme applied to an incompatible model head.
    #[error("scheme mismatch: {scheme} requires head {expected}, model has {actual}")]
    SchemeMismatch {
        scheme: String,
        expected: String,
        actual: String,
    },

    /// Ensemble statistics need at least two members.
    #[error("insufficient ensemble members: need at least 2, got {got}")]
    InsufficientMembers { got: usize },

    /// Metric undefined on the given input (e.g. zero rank variance).
    #[error("metric undefined: {0}")]
    DegenerateMetric(String),

    /// Mixture-model fit failed despite regularization.
    #[error("gmm fit failure at iteration {iteration}: {detail}")]
    FitFailure { iteration: usize, detail: String },

    /// Latent/feature dimension disagreement.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Invalid configuration or arguments.
    #[error("config error: {0}")]
    Config(String),

    /// Sampling target unreachable under the given parameters.
    #[error("sampling failure: {0}")]
    Sampling(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub fn numeric(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NumericFailure {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit-code class for the CLI: 2 config, 3 numeric, 4 io.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::SpeciesMismatch { .. } | Error::SchemeMismatch { .. } => 2,
            Error::Io { .. } | Error::Serialization(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
