//! IO, configuration, reporting and the command-line pipeline around
//! `fragility-core`.

pub mod calibrate;
pub mod config;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod svg;
pub mod writers;

pub use error::{Error, Result};
pub use pipeline::{run, Command, Context};
