pub mod datapipe;
pub mod engine;
pub mod metrics;
pub mod models;
pub mod synth;
pub mod transfer;
pub mod cli;
pub mod error;

pub use error::{Error, Result};
