use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability {0} is outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64),

    #[error("combined radius must be positive, got {0}")]
    NonPositiveRadius(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("scenario does not fit: {0}")]
    ScenarioInfeasible(String),

    #[error("policy weights: {0}")]
    Weights(String),

    #[error("failed to parse {what}: {source}")]
    Parse {
        what: &'static str,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
