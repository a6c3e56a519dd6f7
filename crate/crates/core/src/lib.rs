pub mod config;
pub mod diffcore;
pub mod discovery;
pub mod gridworld;
pub mod harness;
pub mod policy;
pub mod reuse;
pub mod error;

pub use error::{Error, Result};
