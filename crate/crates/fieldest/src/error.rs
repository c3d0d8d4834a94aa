use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the library.
///
/// `Config` and `Scenario` failures are raised while loading or validating a
/// scenario description; the remaining variants occur while running.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates an operation's preconditions.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration file could not be parsed or references unknown keys.
    #[error("config error: {0}")]
    Config(String),

    /// A scenario is structurally unusable (disconnected partition graph,
    /// negative field, agents outside the domain, ...).
    #[error("invalid scenario: {0}")]
    Scenario(String),

    /// A linear solve was rejected because the kernel matrix is too close to
    /// singular. Carries the infinity-norm condition estimate.
    #[error("kernel matrix ill-conditioned (condition estimate {cond:.3e})")]
    IllConditioned { cond: f64 },

    /// The excitation condition was not achieved within the configured
    /// timeout; `detail` lists the rank-deficient blocks.
    #[error("excitation not achieved within {timeout} s: {detail}")]
    ExcitationTimeout { timeout: f64, detail: String },

    /// Run artifacts requested by a post-processing command are missing or
    /// malformed.
    #[error("log error: {0}")]
    Logs(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn scenario(msg: impl Into<String>) -> Self {
        Error::Scenario(msg.into())
    }

    /// True when the error indicates a bad configuration or scenario rather
    /// than a runtime failure; drives the CLI exit-code split.
    pub fn is_config_class(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Scenario(_))
    }
}
