//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

pub mod canary;
pub mod gradients;
pub mod linear;
pub mod metric_oracle;
