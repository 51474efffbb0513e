pub mod agent;
pub mod bus;
pub mod coordinator;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod nn;
pub mod privacy;
pub mod rng;

pub use error::{Error, Result};
