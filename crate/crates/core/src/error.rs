use crate::C64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported spatial dimension {0}; expected 1 or 3")]
    UnsupportedDimension(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("scaling function violates sup|Dg| < sqrt(2) after {widenings} widenings (sup = {sup:.4})")]
    ScalingBound { widenings: usize, sup: f64 },
    #[error("inadmissible distortion parameter: {0}")]
    InadmissibleTheta(String),
    #[error("potential support radius {support} does not fit in the box of half-length {half_length}")]
    SupportExceedsBox { support: f64, half_length: f64 },
    #[error("Dirichlet radius {radius} must exceed the CAP saturation radius {r2}")]
    DirichletRadius { radius: f64, r2: f64 },
    #[error("scaling function is not frozen on the support of the {0}")]
    NotFrozen(&'static str),
    #[error("eigenvalue solver did not converge")]
    NoConvergence,
    #[error("contour comes within {sigma_min:.3e} of the spectrum (threshold {threshold:.1e})")]
    ContourTooClose { sigma_min: f64, threshold: f64 },
    #[error("A - zI is numerically singular at z = {0}")]
    Singular(C64),
    #[error("spectral box exceeds the trusted momentum range of the grid: {0}")]
    UntrustedBox(String),
    #[error("flow integration failed: {0}")]
    Flow(String),
    #[error("band degeneracy at x = {x:?}, xi = {xi:?} (gap {gap:.3e})")]
    Degeneracy { x: Vec<f64>, xi: Vec<f64>, gap: f64 },
    #[error("potential is not spherically symmetric and scalar")]
    NonRadial,
    #[error("precondition not met: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
