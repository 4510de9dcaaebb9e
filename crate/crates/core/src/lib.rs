//! Textless speech coding toolkit: log-mel features, discrete unit encoders,
//! unit-conditioned vocoders, learning-rate schedules and evaluation metrics.

pub mod audio;
pub mod models;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod schedule;
pub mod synthetic;
pub mod upsample;
