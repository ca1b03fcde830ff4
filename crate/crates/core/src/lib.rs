//! Neuro-steered target speaker extraction: EEG-guided time-domain extraction
//! with offline and streaming inference.

pub mod data;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod streaming;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
