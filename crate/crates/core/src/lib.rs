//! Numerical homogenization of the Landau–Lifshitz–Gilbert equation.

#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity
)]

pub mod analysis;
pub mod cell;
pub mod error;
pub mod fem;
pub mod harness;
pub mod llg;
pub mod reconstruct;

pub use error::{Error, Result};
