use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A fractional power or comparison bound was asked for a negative base.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("time {t} is outside the barrier window [{start}, {end}]")]
    OutOfWindow { t: f64, start: f64, end: f64 },

    /// The top barrier level is already negative at a sampling instant, so the
    /// sampled-data guarantee no longer applies.
    #[error("chain `{chain}` left its safe set at t = {t}: psi_top = {psi}")]
    SetExit { chain: String, t: f64, psi: f64 },

    #[error("relative degree check failed for chain `{chain}`: {reason}")]
    RelativeDegree { chain: String, reason: String },

    #[error("quadratic cost is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("QP solver hit the iteration limit ({0})")]
    MaxIterations(usize),

    #[error("integrator step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("initial state violates membership of chain `{chain}` at level {level}: psi = {psi}")]
    InitialMembership {
        chain: String,
        level: usize,
        psi: f64,
    },

    #[error("scenario: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
