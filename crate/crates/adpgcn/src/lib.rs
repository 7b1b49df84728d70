//! Files, reports and the command line around `adpgcn-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod csv_io;
pub mod error;
pub mod pipeline;
pub mod report;

pub use error::{AppError, Result};
