//! Distributed model-free online feedback optimization over networks.

pub mod bounds;
pub mod controller;
pub mod error;
pub mod harness;
pub mod netgraph;
pub mod objective;
pub mod plant;

pub use error::{Error, ErrorClass, Result};
