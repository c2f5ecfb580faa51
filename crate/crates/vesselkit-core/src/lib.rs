//! Finite-rank Sturm-Liouville vessels.
//!
//! The engine realizes an analytic potential `q(x)` from its moment data
//! through a signed Stieltjes moment problem, builds the corresponding
//! finite-dimensional node, evolves it in `x` and `t`, and recovers KdV
//! solutions `q(x, t) = -2 (ln tau)_xx` together with numerical checks of
//! every structural identity of the construction.

// Negated comparisons reject NaN together with out-of-range values;
// index loops mirror the matrix formulas they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod algebra;
pub mod dd;
pub mod error;
pub mod fundsol;
pub mod io;
pub mod kdv;
pub mod moments;
pub mod ode;
pub mod series;
pub mod spectrum;
pub mod vessel;

pub use error::{Error, Result};
