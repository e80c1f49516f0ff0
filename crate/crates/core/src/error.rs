use thiserror::Error;

/// Errors raised anywhere in the discretisation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("closest-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("point is outside the tubular neighbourhood of the surface (distance {distance:e})")]
    OutOfReach { distance: f64 },

    #[error("level-set gradient degenerates (|grad phi| = {norm:e})")]
    DegenerateGradient { norm: f64 },

    #[error("element {element} is degenerate (surface measure {measure:e})")]
    DegenerateElement { element: usize, measure: f64 },

    #[error("no quadrature rule of degree {0} (supported: 1..=12)")]
    UnsupportedDegree(usize),

    #[error("linear system is singular: {0}")]
    SingularSystem(String),

    #[error("iterative solver exhausted its budget after {iterations} iterations (relative residual {residual:e})")]
    SolverNonConvergence { iterations: usize, residual: f64 },

    #[error("kinetic energy blew up at step {step} (energy {energy:e})")]
    BlowUp { step: usize, energy: f64 },

    #[error("eigensolver failed: {0}")]
    EigensolveFailure(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
