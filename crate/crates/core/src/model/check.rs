use std::ops::Range;

use super::graph::{GradSet, ModelGraph};
use crate::nn::{Differentiable, Tensor};

/// `sum(projection * model(x))` as a [`Differentiable`], for gradient checks
/// of a whole double-precision graph.
pub struct ModelObjective {
    pub model: ModelGraph<f64>,
    pub projection: Vec<f64>,
    locations: Vec<(usize, usize, usize)>,
}

impl ModelObjective {
    /// Every segment is made trainable so that all parameters are checked.
    pub fn new(mut model: ModelGraph<f64>, projection: Vec<f64>) -> Self {
        let mut locations = Vec::new();
        for (si, seg) in model.segments_mut().iter_mut().enumerate() {
            seg.trainable = true;
            for (ti, t) in seg.params.tensors().enumerate() {
                locations.push((si, ti, t.len()));
            }
        }
        Self { model, projection, locations }
    }

    fn locate(&self, mut index: usize) -> (usize, usize, usize) {
        for &(si, ti, len) in &self.locations {
            if index < len {
                return (si, ti, index);
            }
            index -= len;
        }
        panic!("parameter index out of range");
    }
}

impl Differentiable for ModelObjective {
    fn param_groups(&self) -> Vec<(String, Range<usize>)> {
        let mut start = 0;
        let mut out = Vec::new();
        for seg in self.model.segments() {
            for (name, t) in seg.params.entries() {
                out.push((format!("{}.{name}", seg.name), start..start + t.len()));
                start += t.len();
            }
        }
        out
    }

    fn param(&self, index: usize) -> f64 {
        let (si, ti, i) = self.locate(index);
        self.model.segments()[si].params.entries()[ti].1.data()[i]
    }

    fn set_param(&mut self, index: usize, value: f64) {
        let (si, ti, i) = self.locate(index);
        let t = self.model.segments_mut()[si].params.tensors_mut().nth(ti).expect("located");
        t.data_mut()[i] = value;
    }

    fn evaluate(&self, input: &Tensor<f64>) -> (f64, u64) {
        let (y, trace) = self.model.forward_trace(input).expect("valid input");
        let value = y.data().iter().zip(&self.projection).map(|(a, b)| a * b).sum();
        (value, trace.branch_signature())
    }

    fn gradients(&self, input: &Tensor<f64>) -> (Vec<f64>, Tensor<f64>) {
        let (y, trace) = self.model.forward_trace(input).expect("valid input");
        let upstream = Tensor::from_vec(y.shape(), self.projection.clone()).expect("projection matches output");
        let mut grads = GradSet::zeros_for(&self.model);
        let gx = self.model.backward(&trace, upstream, &mut grads, true).expect("backward").expect("input grad");
        let flat = grads.segments.into_iter().flatten().flatten().flat_map(|t| t.into_data()).collect();
        (flat, gx)
    }
}
