//! Self-supervised chewing detection from in-ear microphone audio.
//!
//! The crate covers the whole pipeline: signal conditioning and windowing,
//! a small 1-D convolutional network with hand-written gradients, contrastive
//! pretraining, classifier fine-tuning, bout/meal post-processing and metrics.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod interval;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod postprocess;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
