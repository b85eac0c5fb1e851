use thiserror::Error;

use crate::plans::CertifiedZ2;

/// Errors raised by the measure, transport and certification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    /// The defining supremum is infinite when the barycentres differ.
    #[error("barycentre mismatch: |[mu] - [nu]| = {distance:e}")]
    BarycentreMismatch { distance: f64 },

    #[error("measures are not in convex order")]
    NotInConvexOrder,

    #[error("linear program infeasible: {0}")]
    Infeasible(String),

    #[error("solver did not converge after {iterations} iterations (duality measure {measure:e})")]
    NotConverged { iterations: usize, measure: f64 },

    /// Carries the best bracket obtained.
    #[error("not certified: bracket [{:.12e}, {:.12e}], gap {:e}", .0.lower, .0.upper, .0.gap)]
    NotCertified(Box<CertifiedZ2>),

    #[error("point {0:?} is not part of the field")]
    MissingPoint(Vec<f64>),
}

pub type Result<T> = std::result::Result<T, Error>;
