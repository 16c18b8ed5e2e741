pub mod baselines;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod experiment;
pub mod error;
pub mod federation;
pub mod methods;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod selection;

pub use error::{Error, Result};
