//! Desk-scale simulator and library for Computation-as-a-Service resource
//! management: Kalman-filter demand prediction, proportional-fair
//! TTC-abiding service-rate allocation, and AIMD fleet scaling, together
//! with the benchmark controllers they are compared against.

pub mod allocation;
pub mod control;
pub mod domain;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod simulation;

pub use error::{Error, Result};
