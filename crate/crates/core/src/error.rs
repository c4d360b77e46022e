use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),
    #[error("nonstationary parameters: {0}")]
    Nonstationary(String),
    #[error("repeated AR(2) roots are not supported (xi1 = xi2 = {0})")]
    DegenerateRoot(String),
    #[error("AR(2) coefficient b is zero; the model collapses to AR(1)")]
    OrderDegeneracy,
    #[error("complex residue {residue:e} above tolerance in a real-valued quantity")]
    ComplexResidue { residue: f64 },
    #[error("spectral density truncation insufficient at H={truncation} (value {value:e})")]
    TruncationInsufficient { truncation: usize, value: f64 },
    #[error("lag ({h1},{h2}) outside the {n}x{n} lattice")]
    LagOutOfRange { h1: i64, h2: i64, n: usize },
    #[error("design matrix is rank deficient")]
    SingularDesign,
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("lattice side {n} exceeds the dense cap {cap}; use the Kronecker path")]
    SizeCap { n: usize, cap: usize },
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("fitted separable model is not causal: {0}")]
    NonstationaryFit(String),
    #[error("spectral density is not positive at ({lambda1}, {lambda2})")]
    SingularSpectrum { lambda1: f64, lambda2: f64 },
    #[error("need at least {needed} replicates, got {got}")]
    InsufficientReplicates { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Coarse category used for process exit codes and machine-readable reports.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::Io(_) => ErrorCategory::Io,
            _ => ErrorCategory::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Numerical,
    Io,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Numerical => "numerical",
            ErrorCategory::Io => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
