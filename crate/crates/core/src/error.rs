use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("undefined operation: {0}")]
    UndefinedOperation(&'static str),

    #[error("singular factor: tau={tau} or tau_star={tau_star} coincides with gamma={gamma}")]
    SingularFactor { tau: f64, tau_star: f64, gamma: f64 },

    #[error("invalid profile: {reason} (at tau = {tau})")]
    InvalidProfile { reason: String, tau: f64 },

    #[error("point outside domain: {0}")]
    Domain(String),

    #[error("finite-difference stencil leaves the domain along axis {axis}")]
    Boundary { axis: usize },

    #[error("ill-conditioned metric (condition estimate {0:.3e})")]
    Conditioning(f64),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("undefined gradient: {0}")]
    UndefinedGradient(String),

    #[error("inconsistent oracle: {0}")]
    InconsistentOracle(String),

    #[error("Q is not a function of tau: spread {spread:.3e} exceeds {tol:.1e}")]
    NotFunctionOfTau { spread: f64, tol: f64 },

    #[error("gamma is not constant along a fibre: deviation {deviation:.3e} exceeds {tol:.1e}")]
    FiberInconsistency { deviation: f64, tol: f64 },

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UndefinedOperation(_) => "undefined-operation",
            Error::SingularFactor { .. } => "singular-factor",
            Error::InvalidProfile { .. } => "invalid-profile",
            Error::Domain(_) => "domain",
            Error::Boundary { .. } => "boundary",
            Error::Conditioning(_) => "conditioning",
            Error::NumericalFailure(_) => "numerical-failure",
            Error::UndefinedGradient(_) => "undefined-gradient",
            Error::InconsistentOracle(_) => "inconsistent-oracle",
            Error::NotFunctionOfTau { .. } => "not-a-function-of-tau",
            Error::FiberInconsistency { .. } => "fiber-inconsistency",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
        }
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
