//! Numerical toolkit for semiclassical Dirac operators with complex absorbing
//! potentials: Clifford algebra, model assembly on Fourier grids, complex
//! scaling, contour projectors, matrix-valued Hamiltonian dynamics and the
//! resonance/CAP comparison pipelines.

pub mod algebra;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod quantize;
pub mod spectra;
pub mod spin;

pub use error::{Error, Result};
pub use faer::c64 as C64;

/// Dense complex matrix used for assembled operators.
pub type CMat = faer::Mat<C64>;
