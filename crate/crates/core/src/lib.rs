// Range checks are written as negated comparisons so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod ddmpc;
pub mod error;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod sim;
pub mod statefb;
pub mod trajectory;
pub mod trigger_output;

pub use error::{Error, Result};
