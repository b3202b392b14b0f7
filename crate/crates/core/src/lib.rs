//! Numerical estimation of the invariance entropy of control-affine systems.

pub mod cli;
pub mod cocycle;
pub mod config;
pub mod entropy;
pub mod error;
pub mod expr;
pub mod flow;
pub mod graph;
pub mod shadowing;
pub mod splitting;
pub mod system;
pub mod volume;

pub use error::{Error, Result};
