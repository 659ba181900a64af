#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod sim;

pub use error::{Error, Result};
pub mod aoa;
pub mod preprocess;
pub mod features;
pub mod circuit;
pub mod fusion;
pub mod cost;
pub mod pipeline;
