//! Deep local patch descriptors with explicit spatial encoding.

pub mod aggregation;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod feature_backend;
pub mod featuremap;
pub mod io;
pub mod learning;
pub mod model;
pub mod position_encoding;
pub mod selftest;

pub use error::{Error, Result};
