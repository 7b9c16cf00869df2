pub mod analysis;
pub mod checkpoint;
pub mod codec;
pub mod coding;
pub mod data;
pub mod error;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod training;

pub use error::{CoreError, Result};
