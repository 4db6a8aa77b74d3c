//! Parameter-decoupled dual-head semi-supervised 3D segmentation.
//!
//! Everything here is pure computation over in-memory arrays and builds
//! without `std`; file formats, experiment orchestration and the command line
//! live in the companion `pdc` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod metrics;
pub mod objectives;
pub mod real;
pub mod tensor;
pub mod trainer;
pub mod volnet;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Dims3, Grid, Mask, Tensor};
