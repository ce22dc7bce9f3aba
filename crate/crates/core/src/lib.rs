//! Barnes-Hut target search for synapse formation in structural-plasticity
//! simulations, instrumented to count the work each search performs.

pub mod distributed;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod octree;
pub mod oracle;
pub mod plasticity;
pub mod population;
pub mod rng;

pub use error::{Error, Result};
