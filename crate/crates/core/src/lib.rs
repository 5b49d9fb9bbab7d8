//! Joint routing and sensor-driven maintenance planning for a single vehicle.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`degradation`]: Bayesian update of a log-linear degradation signal and
//!    Monte-Carlo remaining-life prediction.
//! 2. [`maintcost`]: the long-run maintenance cost-rate curve built from the
//!    remaining-life distribution, plus a tangent lower envelope.
//! 3. [`tsptw`] and [`iam`]: time-window routing and the iterative alignment
//!    of maintenance-node time-window subintervals.
//! 4. [`baseline`] and [`simulate`]: brute-force oracles, the periodic
//!    maintenance benchmark and realized-cost simulation.

// NaN must fail validation, so negated comparisons are intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod cli;
pub mod degradation;
pub mod error;
pub mod iam;
pub mod instance;
pub mod maintcost;
pub mod simulate;
pub mod tsptw;

pub use error::{Error, Result};
