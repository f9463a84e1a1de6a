// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bags;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod image;
pub mod losses;
pub mod model;
pub mod optim;
pub mod polar;
pub mod smoothmax;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
