pub mod error;
pub mod hash;
pub mod linear_oracle;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
