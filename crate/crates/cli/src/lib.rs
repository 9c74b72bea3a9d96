//! Pipeline orchestration for the playing-style toolkit.

pub mod config;
pub mod error;
pub mod io;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{exit_code, Failure};
pub use stages::{Stage, Workspace};
