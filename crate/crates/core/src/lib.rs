// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod experiments;
pub mod hypotest;
pub mod propensity;
pub mod scenarios;
pub mod statcore;

pub use error::{Error, Result};
