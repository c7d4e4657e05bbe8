//! Simulator, calibration and benchmark harness for a spiking sparse-coding
//! network built on a memristive crossbar.
//!
//! `calibration` turns device and dataset statistics into circuit constants,
//! `engine` simulates one exposure event by event, `training` learns the
//! crossbar in place, and `experiment` ties everything to config files.

pub mod calibration;
pub mod classifier;
pub mod codec;
pub mod crossbar;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod matrix;
pub mod reference;
pub mod spikegen;
pub mod training;

pub use error::{Result, SslcaError};
pub use matrix::Matrix;
