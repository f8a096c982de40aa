use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("torus {l1}x{l2} is not commensurate with magnetic cell width {cell_width}")]
    NonCommensurateTorus { l1: usize, l2: usize, cell_width: usize },

    #[error("invalid flux p/q = {p}/{q}")]
    InvalidFlux { p: i64, q: i64 },

    #[error("invalid potential table: {0}")]
    InvalidPotential(String),

    #[error("translation ({0}, {1}) is not compatible with the torus")]
    InvalidTranslation(i64, i64),

    #[error("operator flag violated: {0}")]
    FlagViolation(String),

    #[error("eigensolver failed: {0}")]
    SolverFailure(String),

    #[error("no spectral gap of width >= {gap_min:e} around {hint}")]
    NoGap { hint: f64, gap_min: f64 },

    #[error("Fermi energy {mu} is within {distance:e} of the spectrum")]
    FermiOnSpectrum { mu: f64, distance: f64 },

    #[error("no circle separates the occupied spectrum from the rest: {0}")]
    EnclosureFailure(String),

    #[error("Riesz quadrature did not converge: idempotency defect {0:e}")]
    QuadratureDivergence(f64),

    #[error("gap {0:e} too small for the inverse Liouvillian")]
    GapTooSmall(f64),

    #[error("generator A_{0} is required but only {1} are available")]
    MissingGenerator(usize, usize),

    #[error("jet truncation exhausted while differentiating along axis {0}")]
    JetOrderExhausted(usize),

    #[error("power-law fit is degenerate: {0}")]
    DegenerateFit(String),

    #[error("not enough data for a fit: {0}")]
    InsufficientData(String),

    #[error("spectral parameter {z} is within {distance:e} of the spectrum")]
    ZTooCloseToSpectrum { z: num_complex::Complex64, distance: f64 },

    #[error("band structure is gapless at the requested filling {0}")]
    GaplessAtFilling(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::SolverFailure(e.to_string())
    }
}
