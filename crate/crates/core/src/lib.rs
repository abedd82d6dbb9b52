//! Algebraic integration for rough paths with delay.
//!
//! This crate implements, on uniform time grids, the sewing calculus for
//! γ-Hölder driving paths with γ > 1/3 and the machinery needed to solve
//! delay differential equations driven by such paths:
//!
//! * [`increments`] — k-increments, the coboundary operator δ with δδ = 0,
//!   Hölder (semi-)norms and the δ product rules;
//! * [`sewing`] — the inverse map Λ of δ on regular cocycles and the
//!   generalised Riemann integral obtained by dyadic refinement;
//! * [`fbm`] — exact-covariance sampling of d-dimensional fractional
//!   Brownian motion (Cholesky baseline, circulant fast path);
//! * [`levy`] — grid construction of the delayed Lévy area x²(v) with an
//!   exact Chen relation;
//! * [`controlled`] — classical and delayed controlled paths, their norms,
//!   and the composition map T_σ;
//! * [`integral`] — the delayed rough integral via corrected Riemann sums
//!   and via Λ (cross-validation mode);
//! * [`solver`] — the windowed Picard fixed point and the equivalent
//!   one-step marching scheme for delay equations, plus the Itô-map
//!   continuity experiment.
//!
//! All numerical kernels are generic over the scalar type through
//! [`Scalar`]; the crate root exports [`Real`] (= `f64`) as the concrete
//! alias used by the CLI and the test suites.

pub mod controlled;
pub mod error;
pub mod fbm;
mod fft;
pub mod grid;
pub mod increments;
pub mod integral;
pub mod levy;
pub mod mat;
pub mod rng;
pub mod scalar;
pub mod sewing;
pub mod solver;
pub mod synthetic;

pub use error::{Error, Result};
pub use grid::{Grid, GridPath};
pub use mat::Mat;
pub use scalar::Scalar;

/// Concrete scalar used by the CLI and by most tests.
pub type Real = f64;

/// Cap on the number of pairs/triples a norm scan evaluates exhaustively.
/// Beyond this the documented deterministic subsample is used and the scan
/// is flagged as approximate.
pub const PAIR_CAP: usize = 2_000_000;
