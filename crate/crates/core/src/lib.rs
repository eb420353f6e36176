//! Utility maximization under proportional transaction costs on finite
//! event trees: primal and dual solves, consistent price systems, shadow
//! prices and exponential indifference pricing.

// `!(x > 0.0)` is how inputs reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cps;
pub mod duality;
pub mod engine;
pub mod error;
pub mod generator;
pub mod objectives;
pub mod pricing;
pub mod shadow;
pub mod trading;
pub mod tree;
pub mod utility;

pub use error::{Error, Result, ValidationError};
