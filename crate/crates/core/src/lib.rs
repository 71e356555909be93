//! Grid-encoded tensor decomposition for compressive imaging.

pub mod admm;
pub mod bench;
pub mod diffopt;
pub mod encoding;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod operators;
pub mod parallel;
pub mod params;
pub mod regularize;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{CoordinateGrid, Tensor};
