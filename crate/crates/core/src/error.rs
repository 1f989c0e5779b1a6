use thiserror::Error;

/// Errors produced anywhere in the sensing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the physical or mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Observation point coincides with the source point.
    #[error("Green's function singularity: separation {0:.3e} m")]
    Singularity(f64),

    #[error("degenerate axis {axis}: standard deviation {std:.3e} m")]
    DegenerateAxis { axis: usize, std: f64 },

    #[error("receiver at ({0:.3}, {1:.3}, {2:.3}) m lies inside the sensing domain")]
    ReceiverInsideDomain(f64, f64, f64),

    /// Krylov iteration failed to reach the requested residual.
    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular design: {0}")]
    SingularDesign(String),

    /// The rate-constrained design problem has no feasible point.
    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("zero gain for UE {0}: upstream design is infeasible")]
    ZeroGain(usize),

    #[error("negative SINR denominator for UE {0}")]
    NegativeDenominator(usize),

    #[error("non-finite loss at {0}")]
    NonFiniteLoss(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
