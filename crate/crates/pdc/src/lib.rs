//! File formats, experiment orchestration and the `pdc` command line on top
//! of `pdc-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod run;

pub use error::{Failure, Result};
