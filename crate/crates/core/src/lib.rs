pub mod data;
pub mod error;
pub mod exec;
pub mod labels;
pub mod metrics;
pub mod nn;
pub mod tensorfile;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
