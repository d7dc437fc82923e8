//! Spectral toolkit for Caputo fractional neutral evolution equations:
//! mild-solution simulation, constructive exact steering with a contraction
//! certificate, and minimum-energy optimal control, specialized out of the
//! box to the one-dimensional heat scenario with a truncated mode-wise
//! control operator.
//!
//! The state space is the span of the first P eigenmodes of a diagonal
//! positive operator; everything downstream (evolution, steering, control)
//! works on coefficient vectors, with all analytic structure concentrated in
//! the Mittag-Leffler kernel evaluations.

// negated comparisons like `!(x > 0.0)` are deliberate: they reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dd;
mod error;
pub mod evolution;
pub mod mittag_leffler;
pub mod optimal_control;
pub mod quad;
pub mod scenarios;
pub mod spectral;
pub mod steering;

pub use error::{Error, Result};
