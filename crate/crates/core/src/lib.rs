//! Core of the valley lab: a small network engine, parameter-space algebra,
//! perturbation directions, 1D landscape scans, softmax/ReLU probes and a
//! federated-averaging simulator with sign regularisation.
//!
//! The crate is `no_std` (with `alloc`); file formats, datasets on disk and
//! the command line live in the companion `valley-lab` crate.

#![no_std]
extern crate alloc;

pub mod data;
pub mod error;
pub mod exec;
pub mod fed;
pub mod nn;
pub mod noise;
pub mod params;
pub mod probes;
pub mod rng;
pub mod scan;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
