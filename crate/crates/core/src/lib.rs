pub mod env;
pub mod baselines;
pub mod client;
pub mod data;
pub mod error;
pub mod harness;
pub mod eval;
pub mod nn;
pub mod numfmt;
pub mod rng;
pub mod server;

pub use error::{Error, Result};
