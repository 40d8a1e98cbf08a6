//! Machinery fault diagnosis from vibration recordings: FFT magnitude
//! features, variance-threshold selection, PCA, and an encoder-only
//! transformer classifier trained with hand-written backpropagation.

pub mod container;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod fft;
pub mod model;
pub mod nn;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
