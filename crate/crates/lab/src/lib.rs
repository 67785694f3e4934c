pub mod checkpoint;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod exec;
pub mod manifest;
pub mod plot;
pub mod setup;
pub mod tables;

pub use error::{LabError, LabResult};
