// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anticipation;
pub mod control;
pub mod error;
pub mod harness;
pub mod impact;
pub mod numerics;
pub mod sim;
pub mod trajectory;

pub use error::{Error, Result};
