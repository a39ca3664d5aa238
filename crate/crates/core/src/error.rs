use thiserror::Error;

/// Errors raised by the spectral approximation library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum KlError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (relative deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("trace {trace:.15} differs from 1")]
    TraceNotUnit { trace: f64 },

    #[error("base matrix is not strictly positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    SingularBase { min_eigenvalue: f64 },

    #[error("A is not stable (spectral radius {spectral_radius:.6})")]
    UnstableA { spectral_radius: f64 },

    #[error("(A, B) is not reachable (numerical rank {rank} < {n})")]
    NotReachable { rank: usize, n: usize },

    #[error("A has no eigenvalue at the origin (smallest singular value {sigma_min:.3e})")]
    NonsingularA { sigma_min: f64 },

    #[error("sigma is not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    SigmaNotPD { min_eigenvalue: f64 },

    #[error("grid of {grid} points is too coarse, need at least {required}")]
    GridTooCoarse { grid: usize, required: usize },

    #[error("insufficient data: {got} samples, need more than {required}")]
    InsufficientData { got: usize, required: usize },

    #[error("spectral factor is not valid: {0}")]
    InvalidFactor(String),

    #[error("transfer function is singular at grid angle {theta:.6}")]
    EvaluationSingular { theta: f64 },

    #[error("spectrum is not positive on the unit circle (min {min_value:.3e})")]
    SpectrumNotPositive { min_value: f64 },

    #[error("no stabilizing Riccati solution: {0}")]
    NoStabilizingSolution(String),

    #[error("Lyapunov solve failed: {0}")]
    LyapunovSolveFailure(String),

    #[error("problem is infeasible: {0}")]
    InfeasibleProblem(String),

    #[error("not a fixed point (constraint residual {residual:.3e})")]
    NotAFixedPoint { residual: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for KlError {
    fn from(e: std::io::Error) -> Self {
        KlError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, KlError>;
