//! Command line and HTTP front ends for `pandemon-core`.

pub mod api;
pub mod cli;
pub mod error;
pub mod views;

pub use error::ServiceError;
