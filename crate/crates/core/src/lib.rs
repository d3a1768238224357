//! SIR epidemic dynamics coupled to an asset market with myopic and
//! rational-expectations investors.
// Negated comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod epidemic;
pub mod error;
pub mod market;
pub mod numerics;
pub mod output;
pub mod rational;
pub mod verify;

pub use error::{Error, Result};
