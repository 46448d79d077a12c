//! Run configuration, file formats and the command pipeline around
//! `covsteer-core`.

pub mod config;
pub mod files;
pub mod pipeline;

pub use config::{RunConfig, Setup};
pub use pipeline::{cmd_check, cmd_simulate, cmd_solve, Status};
