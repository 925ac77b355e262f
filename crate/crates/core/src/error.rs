use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("level mismatch: expected level {expected}, got {found}")]
    LevelMismatch { expected: u32, found: u32 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// `1 + dt * sigma` vanished or turned negative for some Kronecker-sum eigenvalue.
    #[error("singular implicit Euler step: 1 + dt*sigma = {denominator:e} (sigma = {sigma:e})")]
    SingularStep { sigma: f64, denominator: f64 },

    #[error("empty combination scheme: order {order} needs level >= order, got {level}")]
    EmptyScheme { order: usize, level: u32 },

    #[error("block Gauss-Seidel did not converge after {sweeps} sweeps (residuals {history:?})")]
    NotConverged { sweeps: usize, history: Vec<f64> },

    #[error("block Gauss-Seidel diverged after {sweeps} sweeps (residuals {history:?})")]
    Diverged { sweeps: usize, history: Vec<f64> },

    #[error("Newton iteration failed at step {step} (t = {time}): residual {residual:e}")]
    NewtonFailed { step: usize, time: f64, residual: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("config: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code for a command that stopped on this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::SingularStep { .. } | Error::NotConverged { .. } | Error::Diverged { .. } | Error::NewtonFailed { .. } => 3,
            Error::Numerical(_) | Error::Io(_) => 1,
            _ => 2,
        }
    }

    /// True for failures of an iterative or implicit solve.
    pub fn is_convergence_failure(&self) -> bool {
        self.exit_code() == 3
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
