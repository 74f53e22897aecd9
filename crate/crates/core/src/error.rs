use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OuError {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The drift has an eigenvalue with nonnegative real part, so no invariant measure exists.
    #[error("drift is not Hurwitz (largest real part of the spectrum is {max_real_part:e}); no invariant measure")]
    HurwitzViolation { max_real_part: f64 },

    #[error("quadrature did not converge to tolerance {tol:e} (estimated error {estimate:e})")]
    QuadratureNonConvergence { tol: f64, estimate: f64 },

    #[error("domain too small: {0}")]
    DomainTooSmall(String),

    #[error("the Kolmogorov kernel representation needs s = 1, got s = {0}")]
    FractionalUnsupported(f64),

    #[error("degenerate norm: {0}")]
    DegenerateNorm(String),

    #[error("argument outside the domain of the bound: {0}")]
    DomainError(String),

    #[error("grid too coarse for the thickness window: {0}")]
    ResolutionTooCoarse(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("observation data carries no derivative snapshots")]
    MissingDerivative,

    #[error("regime refused: {0}")]
    RegimeRefused(String),
}

pub type Result<T> = std::result::Result<T, OuError>;

/// Non-fatal diagnostics attached to a computation.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// The periodic box truncates a non-negligible part of a density or solution.
    DomainTooSmall { detail: String },
    /// The frequency warp pushed part of the spectrum outside the frequency box.
    FrequencyBoxExceeded { lost_fraction: f64 },
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::DomainTooSmall { detail } => write!(f, "domain too small: {detail}"),
            Warning::FrequencyBoxExceeded { lost_fraction } => {
                write!(f, "frequency warp leaves the box: {:.3}% of the spectral mass lost", 100.0 * lost_fraction)
            }
        }
    }
}
