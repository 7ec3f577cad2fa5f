//! Adaptive P1 finite elements for sparse optimal control problems governed
//! by the integral fractional Laplacian on two-dimensional domains.
//!
//! The pipeline is: [`mesh`] builds and refines conforming triangulations,
//! [`assembly`] assembles the dense nonlocal stiffness matrix, [`optimality`]
//! solves the discrete optimality system, [`frac_eval`] and [`estimator`]
//! compute weighted residual indicators, and [`afem`] runs the adaptive loop.
//! [`harness`] holds the benchmark problems used by the CLI.

pub mod afem;
pub mod assembly;
pub mod estimator;
pub mod frac_eval;
pub mod harness;
pub mod kernel;
pub mod mesh;
pub mod optimality;
pub mod quadrature;
pub mod special;

pub type Point = [f64; 2];

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("point ({0}, {1}) is outside the mesh")]
    OutsideDomain(f64, f64),
    #[error("point is not inside element {0}")]
    OutsideElement(usize),
    #[error("point too close to the boundary of element {0}")]
    TooCloseToSkeleton(usize),
    #[error("non-finite quadrature value on element pair ({0}, {1})")]
    NonFiniteQuadrature(usize, usize),
    #[error("non-finite function value at ({0}, {1})")]
    NonFiniteValue(f64, f64),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("fixed-point iteration diverged at iteration {iterations} (residual {residual:e})")]
    Diverged { iterations: usize, residual: f64 },
    #[error("all indicators are zero")]
    ZeroIndicators,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{0}")]
    InsufficientData(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("AFEM iteration {iteration}: {source}")]
    Afem {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
