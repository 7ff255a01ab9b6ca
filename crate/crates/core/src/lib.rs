//! Numerical differential geometry on immersed manifolds: induced metrics,
//! curvature, symplectic geodesics, shooting, curve comparison, curvature
//! sampling and neural distance fields.

// Negated comparisons reject NaN along with out-of-range values; tensor code
// indexes several arrays with one loop variable.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod curvature;
pub mod curves;
pub mod diff;
pub mod eikonal;
pub mod error;
pub mod geodesic;
pub mod io;
pub mod manifold;
pub mod nn;
pub mod sampling;

pub use error::{GeoError, Result};
