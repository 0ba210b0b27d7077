//! Command implementations behind the `cjtvae` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod records;

pub use config::RunConfig;
pub use error::{Failure, Result};
pub use records::{EvalRecord, Status};
