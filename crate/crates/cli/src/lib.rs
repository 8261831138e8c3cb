//! Command line and HTTP front ends for `egomem-core`.

pub mod app;
pub mod cli;
pub mod error;
pub mod server;

pub use error::AppError;
