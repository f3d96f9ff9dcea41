pub mod cnn;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod format;
pub mod locator;
pub mod pipeline;
pub mod svg;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
