//! Network architecture, parameter storage, forward/backward passes and weight files.

mod arch;
mod check;
mod graph;
mod io;

pub use arch::{
    Activation, ArchKind, ArchitectureSpec, LayerSpec, Shape, EMBEDDING_DIM, FEATURE_BINS, FEATURE_DIM, HEAD_WIDTH,
    WINDOW_LEN,
};
pub use check::ModelObjective;
pub use graph::{
    build_f, build_g_linear, build_g_nonlinear, build_h, compose, split_g_nonlinear, GradSet, ModelGraph, ParamSet,
    Segment, Trace,
};
pub use io::{decode_weights, encode_weights, load_weights, save_weights, FORMAT_VERSION, MAGIC};

use serde::Serialize;

use crate::nn::Scalar;

#[derive(Debug, Clone, Serialize)]
pub struct SegmentSummary {
    pub name: String,
    pub arch: ArchitectureSpec,
    pub trainable: bool,
    pub param_count: usize,
}

/// JSON-friendly description of a model without its weights.
#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub segments: Vec<SegmentSummary>,
    pub param_count: usize,
}

impl ModelSummary {
    pub fn of<T: Scalar>(model: &ModelGraph<T>) -> Self {
        Self {
            segments: model
                .segments()
                .iter()
                .map(|s| SegmentSummary {
                    name: s.name.clone(),
                    arch: s.arch.clone(),
                    trainable: s.trainable,
                    param_count: s.params.param_count(),
                })
                .collect(),
            param_count: model.param_count(),
        }
    }
}
