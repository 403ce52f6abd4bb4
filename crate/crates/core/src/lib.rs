// `!(x > 0.0)` guards deliberately reject NaN; tabulated data keeps source digits.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod cli;
pub mod constants;
pub mod dynamics;
pub mod error;
pub mod fiber_modes;
pub mod materials;
pub mod special;
pub mod tracking;
pub mod trap_model;

pub use error::{Error, Result};
