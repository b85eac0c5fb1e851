//! Exact second-order Zolotarev and quadratic Wasserstein distances between
//! finitely supported probability measures, with primal/dual certificates.

// `!(x > 0.0)` rejects NaN as well; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod inequalities;
pub mod linalg;
pub mod lp;
pub mod measures;
pub mod plans;
pub mod wasserstein;
pub mod zolotarev;

pub use error::{Error, Result};
pub use measures::DiscreteMeasure;
