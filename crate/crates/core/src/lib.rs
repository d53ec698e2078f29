pub mod benchmark;
pub mod classical;
pub mod cli;
pub mod config;
pub mod degrade;
pub mod error;
pub mod io;
pub mod manifest;
pub mod masking;
pub mod metrics;
pub mod neural;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Result, SsiError};
