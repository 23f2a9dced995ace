pub mod error;
pub mod hedging;
pub mod kernel;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pricing;
pub mod provenance;
pub mod report;
pub mod calibration;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod rng;

pub use error::{Error, Result};
