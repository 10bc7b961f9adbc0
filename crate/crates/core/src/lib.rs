//! Wearable seismocardiogram (SCG) processing and modeling.
//!
//! The pipeline conditions three-axis chest acceleration, gates it into
//! beats with a simultaneous ECG, rejects low-quality beats by their DTW
//! distance to the subject template, turns the remaining beats into
//! Morse-wavelet scalogram images and feeds those, together with subject
//! demographics, to a CNN+MLP fusion network that either regresses the
//! aortic peak systolic velocity or classifies the aortic valve condition.

pub mod conditioning;
pub mod error;
pub mod experiment;
pub mod gating;
pub mod kv;
pub mod neural;
pub mod pipeline;
pub mod quality;
pub mod report;
pub mod scalogram;
pub mod signal_model;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
