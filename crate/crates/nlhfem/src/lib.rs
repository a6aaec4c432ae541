//! Adaptive P1 finite elements for the 2D nonlinear (Kerr) Helmholtz equation
//!
//! ```text
//! -Δu - k²(1 + ε·1_{Ω₀}|u|²)u = f   in Ω,
//! ∂u/∂n + iku = g                   on the impedance boundary,
//! u = 0                             on the Dirichlet boundary,
//! ```
//!
//! with optional continuous interior penalty (CIP) stabilization against
//! pollution at large wave numbers.
//!
//! The crate is organized along the solver pipeline:
//!
//! * [`mesh`] — conforming triangulations, newest-vertex bisection, subdomain
//!   tracking for the Kerr region Ω₀
//! * [`problem`] — problem data (k, ε, f, g, boundary split) and the two
//!   built-in experiment setups, one with a manufactured exact solution
//! * [`assembly`] — P1 form blocks, CIP jump matrix, and the real 2N×2N
//!   block systems for the nonlinear iterations
//! * [`solver`] — sparse direct solves, Newton / frozen / modified-Newton
//!   iterations, continuation in the incident amplitude
//! * [`estimator`] — neighbor-augmented residual estimator, oscillation
//!   terms, Dörfler marking, elliptic projection
//! * [`adaptive`] — the solve → estimate → mark → refine loop and its
//!   uniform-refinement counterpart
//! * [`verify`] — self-contained oracle checks used by the `nlh verify`
//!   command

pub mod adaptive;
pub mod assembly;
pub mod config;
pub mod estimator;
pub mod geom;
pub mod io;
pub mod mesh;
pub mod problem;
pub mod quadrature;
pub mod solver;
pub mod special;
pub mod verify;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error("nonlinear iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("run exceeds configured dof cap: {0}")]
    DofCap(String),
    /// Adaptive loop aborted mid-run; the trace up to the failure rides along
    /// so callers can still dump it.
    #[error("adaptive loop aborted at iteration {at}: {source}")]
    Loop {
        at: usize,
        source: Box<Error>,
        partial: Box<adaptive::AdaptTrace>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
