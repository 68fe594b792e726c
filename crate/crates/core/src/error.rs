use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semi-definite (eigenvalue {eigenvalue:e})")]
    NotPositiveSemidefinite { eigenvalue: f64 },

    #[error("rank-1 system is singular: 1 + F^T gamma = {denominator:e}")]
    SingularDenominator { denominator: f64 },

    #[error("auxiliary-variable shift is invalid: V + C0 = {radicand:e} must be positive")]
    InvalidShift { radicand: f64 },

    #[error("potential is singular at t = {t}, x = {x:?} (U + C0 = {radicand:e})")]
    SingularPotential { t: f64, x: [f64; 3], radicand: f64 },

    #[error("elliptic modulus {0} is outside [0, 1]")]
    ModulusOutOfRange(f64),

    #[error("Gauss-Legendre order {0} is outside 1..=10")]
    QuadratureOrder(usize),

    #[error("fixed-point iteration produced a non-finite iterate at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("step size underflow at t = {t} (h = {h:e}); problem is stiff or singular")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("right-hand side is not finite at t = {t}")]
    Domain { t: f64 },

    #[error("reference state has zero norm")]
    DegenerateReference,

    #[error("stage {index} failed: {source}")]
    Stage {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
