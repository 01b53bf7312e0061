// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod config;
pub mod error;
pub mod network;
pub mod nopa;
pub mod optimize;
pub mod oracle;
pub mod quad;
pub mod sweep;

pub use error::{Error, Result};
