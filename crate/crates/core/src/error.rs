use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("{0} contains non-finite entries")]
    NonFinite(String),

    #[error("operation requires {need} data, got {got}")]
    WrongRegime { need: String, got: String },

    #[error("input sequences differ between the two experiments")]
    InputMismatch,

    #[error("reference model is not Schur stable (spectral radius {rho})")]
    UnstableModel { rho: f64 },

    #[error("sample covariance is numerically singular (min singular value {min_sv:.3e})")]
    SingularCovariance { min_sv: f64 },

    #[error("exact matching infeasible: relative residual {residual:.3e} exceeds {tol:.3e}")]
    InfeasibleMatching { residual: f64, tol: f64 },

    #[error("malformed SDP: {0}")]
    MalformedProblem(String),

    #[error("SDP solver failed with status {status}: {detail}")]
    Solver { status: String, detail: String },

    #[error("Lyapunov factor P is ill conditioned (condition estimate {cond:.3e})")]
    IllConditioned { cond: f64 },

    #[error("noise energy is zero in at least one component, SNR undefined")]
    ZeroNoise,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {source_name}: {detail}")]
    Parse { source_name: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dimension(context: &str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Dimension {
            context: context.to_string(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
