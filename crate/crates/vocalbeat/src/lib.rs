//! Files, synthetic data, benchmarks and the command line around
//! [`vocalbeat_core`].

pub mod background;
pub mod bench;
pub mod cli;
pub mod error;
pub mod io;
pub mod synth;

pub use error::{Error, Result};
pub use vocalbeat_core as core;
