use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{Activation, ArchKind, ArchitectureSpec, LayerSpec, Shape, FEATURE_DIM};
use crate::error::{ensure, Error, Result};
use crate::nn::{
    adaptive_maxpool, conv1d_backward_impl, conv1d_forward, dense_backward, dense_forward, maxpool2_backward,
    maxpool2_forward, relu_backward, sigmoid_backward, BranchHasher, PoolIndices, Scalar, Tensor,
};

/// Named parameter tensors of one segment, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, _) in &entries {
            ensure!(seen.insert(name.as_str()), InvalidArgument, "duplicate parameter name {name}");
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, Tensor<T>)] {
        &self.entries
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    fn check_against(&self, arch: &ArchitectureSpec) -> Result<()> {
        let layout = arch.param_layout()?;
        ensure!(
            layout.len() == self.entries.len(),
            Shape,
            "{:?} needs {} parameter tensors, got {}",
            arch.kind,
            layout.len(),
            self.entries.len()
        );
        for ((_, shape), (name, t)) in layout.iter().zip(&self.entries) {
            ensure!(t.shape() == shape.as_slice(), Shape, "parameter {name}: expected {shape:?}, got {:?}", t.shape());
        }
        Ok(())
    }
}

/// A named piece of the network with its own parameters and trainable flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T> {
    pub name: String,
    pub arch: ArchitectureSpec,
    pub params: ParamSet<T>,
    pub trainable: bool,
}

impl<T: Scalar> Segment<T> {
    pub fn new(name: impl Into<String>, arch: ArchitectureSpec, params: ParamSet<T>, trainable: bool) -> Result<Self> {
        params.check_against(&arch)?;
        Ok(Self { name: name.into(), arch, params, trainable })
    }

    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn initialized(name: impl Into<String>, arch: ArchitectureSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = arch
            .param_layout()?
            .into_iter()
            .map(|(pname, shape)| {
                let t = if shape.len() == 1 {
                    Tensor::zeros(&shape)
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| T::from_f64_lossy(rng.random_range(-bound..bound))).collect();
                    Tensor::from_vec(&shape, data).expect("layout shape")
                };
                (pname, t)
            })
            .collect();
        Self::new(name, arch, ParamSet::new(entries)?, true)
    }
}

/// Per-layer state kept by a traced forward pass.
#[derive(Debug, Clone)]
enum LayerCache<T> {
    Conv { input: Tensor<T>, output: Tensor<T> },
    Pool(PoolIndices),
    Flatten { shape: Vec<usize> },
    Dense { input: Tensor<T>, output: Tensor<T> },
}

/// Everything a backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    segments: Vec<Vec<LayerCache<T>>>,
}

impl<T: Scalar> Trace<T> {
    /// Fingerprint of every ReLU sign and pooling choice in the pass.
    pub fn branch_signature(&self) -> u64 {
        let mut h = BranchHasher::default();
        for cache in self.segments.iter().flatten() {
            match cache {
                LayerCache::Conv { output, .. } | LayerCache::Dense { output, .. } => {
                    let mut word = 0u64;
                    for (i, v) in output.data().iter().enumerate() {
                        word = (word << 1) | (*v > T::zero()) as u64;
                        if i % 64 == 63 {
                            h.push(word);
                            word = 0;
                        }
                    }
                    h.push(word);
                }
                LayerCache::Pool(idx) => idx.argmax.iter().for_each(|&a| h.push(a as u64)),
                LayerCache::Flatten { .. } => {}
            }
        }
        h.finish()
    }
}

/// Gradients shaped like the trainable segments of a [`ModelGraph`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet<T> {
    /// `None` for frozen segments.
    pub segments: Vec<Option<Vec<Tensor<T>>>>,
}

impl<T: Scalar> GradSet<T> {
    pub fn zeros_for(model: &ModelGraph<T>) -> Self {
        Self {
            segments: model
                .segments
                .iter()
                .map(|s| s.trainable.then(|| s.params.tensors().map(|t| Tensor::zeros(t.shape())).collect()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradSet<T>) -> Result<()> {
        ensure!(self.segments.len() == other.segments.len(), Shape, "gradient sets differ in segment count");
        for (a, b) in self.segments.iter_mut().zip(&other.segments) {
            match (a, b) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.iter_mut().zip(b) {
                        x.add_assign(y)?;
                    }
                }
                (None, None) => {}
                _ => return Err(Error::Shape("gradient sets differ in trainable segments".into())),
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.segments.iter_mut().flatten().flatten() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.segments
            .iter()
            .flatten()
            .flatten()
            .map(|t| t.norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// A chain of segments evaluated in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph<T> {
    segments: Vec<Segment<T>>,
}

impl<T: Scalar> ModelGraph<T> {
    pub fn new(segments: Vec<Segment<T>>) -> Result<Self> {
        ensure!(!segments.is_empty(), InvalidArgument, "a model needs at least one segment");
        let mut names = HashSet::new();
        for s in &segments {
            ensure!(names.insert(s.name.as_str()), InvalidArgument, "duplicate segment name {}", s.name);
        }
        for pair in segments.windows(2) {
            let out = pair[0].arch.output()?;
            ensure!(
                out == pair[1].arch.input,
                Shape,
                "segment {} outputs {out:?} but {} expects {:?}",
                pair[0].name,
                pair[1].name,
                pair[1].arch.input
            );
        }
        for s in &segments {
            s.arch.output()?;
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment<T>] {
        &self.segments
    }

    pub fn segments_mut(&mut self) -> &mut [Segment<T>] {
        &mut self.segments
    }

    pub fn into_segments(self) -> Vec<Segment<T>> {
        self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment<T>> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn input_shape(&self) -> Shape {
        self.segments[0].arch.input
    }

    pub fn output_shape(&self) -> Shape {
        self.segments.last().expect("non-empty").arch.output().expect("validated")
    }

    pub fn param_count(&self) -> usize {
        self.segments.iter().map(|s| s.params.param_count()).sum()
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.segments.iter().filter(|s| s.trainable).map(|s| s.name.as_str()).collect()
    }

    /// Sets the trainable flag of every segment from a name set.
    pub fn set_trainable(&mut self, trainable: &[&str]) -> Result<()> {
        ensure!(!trainable.is_empty(), InvalidArgument, "trainable set must not be empty");
        for name in trainable {
            ensure!(
                self.segments.iter().any(|s| s.name == *name),
                InvalidArgument,
                "no segment named {name}"
            );
        }
        for s in &mut self.segments {
            s.trainable = trainable.contains(&s.name.as_str());
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        x.expect_shape(&self.input_shape().dims())
    }

    /// Inference-only forward pass.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.segments.iter().try_fold(x.clone(), |cur, seg| segment_forward(seg, cur))
    }

    /// Forward pass that records what [`ModelGraph::backward`] needs.
    ///
    /// Leading frozen segments are evaluated without caching since no
    /// gradient ever flows into them.
    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>)> {
        self.check_input(x)?;
        let first_trainable = self.segments.iter().position(|s| s.trainable).unwrap_or(0);
        let mut cur = x.clone();
        let mut trace = Trace { segments: Vec::with_capacity(self.segments.len()) };
        for (si, seg) in self.segments.iter().enumerate() {
            if si < first_trainable {
                cur = segment_forward(seg, cur)?;
                trace.segments.push(Vec::new());
                continue;
            }
            let mut caches = Vec::with_capacity(seg.arch.layers.len());
            let mut params = seg.params.tensors();
            for layer in &seg.arch.layers {
                cur = match *layer {
                    LayerSpec::Conv { activation, .. } => {
                        let (w, b) = (params.next().expect("weight"), params.next().expect("bias"));
                        let out = activate(conv1d_forward(&cur, w, b)?, activation);
                        caches.push(LayerCache::Conv { input: cur, output: out.clone() });
                        out
                    }
                    LayerSpec::MaxPool2 => {
                        let (out, idx) = maxpool2_forward(&cur)?;
                        caches.push(LayerCache::Pool(idx));
                        out
                    }
                    LayerSpec::AdaptiveMaxPool { target_len } => {
                        let (out, idx) = adaptive_maxpool(&cur, target_len)?;
                        caches.push(LayerCache::Pool(idx));
                        out
                    }
                    LayerSpec::Flatten => {
                        caches.push(LayerCache::Flatten { shape: cur.shape().to_vec() });
                        let n = cur.len();
                        cur.reshape(&[n])?
                    }
                    LayerSpec::Dense { activation, .. } => {
                        let (w, b) = (params.next().expect("weight"), params.next().expect("bias"));
                        let out = activate(dense_forward(&cur, w, b)?, activation);
                        caches.push(LayerCache::Dense { input: cur, output: out.clone() });
                        out
                    }
                };
            }
            trace.segments.push(caches);
        }
        Ok((cur, trace))
    }

    /// Accumulates parameter gradients of trainable segments into `grads`.
    ///
    /// Returns the gradient with respect to the model input when
    /// `want_input_grad` is set (which requires a trace of every segment,
    /// i.e. the first segment must be trainable).
    pub fn backward(
        &self,
        trace: &Trace<T>,
        upstream: Tensor<T>,
        grads: &mut GradSet<T>,
        want_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        ensure!(trace.segments.len() == self.segments.len(), Shape, "trace does not belong to this model");
        ensure!(grads.segments.len() == self.segments.len(), Shape, "gradient set does not match model");
        upstream.expect_shape(&self.output_shape().dims())?;
        let first_trainable = self
            .segments
            .iter()
            .position(|s| s.trainable)
            .ok_or_else(|| Error::InvalidArgument("model has no trainable segment".into()))?;
        ensure!(
            !want_input_grad || first_trainable == 0,
            InvalidArgument,
            "input gradient requested but the leading segment is frozen"
        );

        let mut g = upstream;
        for si in (first_trainable..self.segments.len()).rev() {
            let seg = &self.segments[si];
            let caches = &trace.segments[si];
            ensure!(caches.len() == seg.arch.layers.len(), Shape, "trace of segment {} is incomplete", seg.name);
            let params: Vec<&Tensor<T>> = seg.params.tensors().collect();
            let mut slot = params.len();
            let mut seg_grads = grads.segments[si].as_mut();
            for (li, cache) in caches.iter().enumerate().rev() {
                let need_input = li > 0 || si > first_trainable || want_input_grad;
                g = match cache {
                    LayerCache::Conv { input, output } => {
                        slot -= 2;
                        let g_pre = activation_backward(seg.arch.layers[li], output, &g)?;
                        let (gk, gb, gx) = conv1d_backward_impl(input, params[slot], &g_pre, need_input)?;
                        if let Some(sg) = seg_grads.as_deref_mut() {
                            sg[slot].add_assign(&gk)?;
                            sg[slot + 1].add_assign(&gb)?;
                        }
                        match gx {
                            Some(gx) => gx,
                            None => break,
                        }
                    }
                    LayerCache::Pool(idx) => maxpool2_backward(idx, &g)?,
                    LayerCache::Flatten { shape } => g.reshape(shape)?,
                    LayerCache::Dense { input, output } => {
                        slot -= 2;
                        let g_pre = activation_backward(seg.arch.layers[li], output, &g)?;
                        let dg = dense_backward(input, params[slot], &g_pre)?;
                        if let Some(sg) = seg_grads.as_deref_mut() {
                            sg[slot].add_assign(&dg.grad_weight)?;
                            sg[slot + 1].add_assign(&dg.grad_bias)?;
                        }
                        dg.grad_x
                    }
                };
            }
        }
        Ok(want_input_grad.then_some(g))
    }
}

fn segment_forward<T: Scalar>(seg: &Segment<T>, mut cur: Tensor<T>) -> Result<Tensor<T>> {
    let mut params = seg.params.tensors();
    for layer in &seg.arch.layers {
        cur = match *layer {
            LayerSpec::Conv { activation, .. } => {
                let (w, b) = (params.next().expect("weight"), params.next().expect("bias"));
                activate(conv1d_forward(&cur, w, b)?, activation)
            }
            LayerSpec::MaxPool2 => maxpool2_forward(&cur)?.0,
            LayerSpec::AdaptiveMaxPool { target_len } => adaptive_maxpool(&cur, target_len)?.0,
            LayerSpec::Flatten => {
                let n = cur.len();
                cur.reshape(&[n])?
            }
            LayerSpec::Dense { activation, .. } => {
                let (w, b) = (params.next().expect("weight"), params.next().expect("bias"));
                activate(dense_forward(&cur, w, b)?, activation)
            }
        };
    }
    Ok(cur)
}

fn activate<T: Scalar>(t: Tensor<T>, activation: Activation) -> Tensor<T> {
    match activation {
        Activation::Linear => t,
        Activation::Relu => crate::nn::relu_forward(&t),
        Activation::Sigmoid => crate::nn::sigmoid_forward(&t),
    }
}

fn activation_backward<T: Scalar>(layer: LayerSpec, output: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    let activation = match layer {
        LayerSpec::Conv { activation, .. } | LayerSpec::Dense { activation, .. } => activation,
        _ => Activation::Linear,
    };
    match activation {
        Activation::Linear => Ok(upstream.clone()),
        Activation::Relu => relu_backward(output, upstream),
        Activation::Sigmoid => sigmoid_backward(output, upstream),
    }
}

fn single<T: Scalar>(name: &str, arch: ArchitectureSpec, seed: u64) -> ModelGraph<T> {
    let seg = Segment::initialized(name, arch, seed).expect("built-in architecture is valid");
    ModelGraph::new(vec![seg]).expect("single segment")
}

// Distinct streams for each piece built from the same user seed.
const F_STREAM: u64 = 0x0f;
const GL_STREAM: u64 = 0x91;
const GNL_STREAM: u64 = 0x92;
const H_STREAM: u64 = 0xa7;

fn stream(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ tag
}

/// Convolutional feature extractor, 10000 samples -> 512 features.
pub fn build_f<T: Scalar>(seed: u64) -> ModelGraph<T> {
    single("f", ArchitectureSpec::feature_extractor(), stream(seed, F_STREAM))
}

/// Linear projection head, 512 -> 128.
pub fn build_g_linear<T: Scalar>(seed: u64) -> ModelGraph<T> {
    single("g_l", ArchitectureSpec::linear_projection(), stream(seed, GL_STREAM))
}

/// Non-linear projection head, 512 -> 512 -> 512 -> 128.
pub fn build_g_nonlinear<T: Scalar>(seed: u64) -> ModelGraph<T> {
    single("g_nl", ArchitectureSpec::nonlinear_projection(), stream(seed, GNL_STREAM))
}

/// Classifier head, 512 -> 200 -> 200 -> 1.
pub fn build_h<T: Scalar>(seed: u64) -> ModelGraph<T> {
    single("h", ArchitectureSpec::classifier(FEATURE_DIM), stream(seed, H_STREAM))
}

/// Splits the non-linear projection head into its first layer and the rest.
pub fn split_g_nonlinear<T: Scalar>(g: &ModelGraph<T>) -> Result<(ModelGraph<T>, ModelGraph<T>)> {
    ensure!(
        g.segments.len() == 1 && g.segments[0].arch.kind == ArchKind::NonLinearProjection,
        InvalidArgument,
        "only a standalone non-linear projection head can be split"
    );
    let seg = &g.segments[0];
    let arch = &seg.arch;
    let first_out = arch.shapes()?[1];
    let entries = seg.params.entries();
    let g1 = Segment::new(
        "g_nl1",
        ArchitectureSpec {
            kind: ArchKind::NonLinearProjectionFirst,
            input: arch.input,
            layers: arch.layers[..1].to_vec(),
        },
        ParamSet::new(entries[..2].to_vec())?,
        seg.trainable,
    )?;
    let g2 = Segment::new(
        "g_nl2",
        ArchitectureSpec {
            kind: ArchKind::NonLinearProjectionRest,
            input: first_out,
            layers: arch.layers[1..].to_vec(),
        },
        ParamSet::new(entries[2..].to_vec())?,
        seg.trainable,
    )?;
    Ok((ModelGraph::new(vec![g1])?, ModelGraph::new(vec![g2])?))
}

/// Chains models into one graph; only segments named in `trainable` receive updates.
pub fn compose<T: Scalar>(parts: Vec<ModelGraph<T>>, trainable: &[&str]) -> Result<ModelGraph<T>> {
    let segments: Vec<Segment<T>> = parts.into_iter().flat_map(|m| m.segments).collect();
    let mut model = ModelGraph::new(segments)?;
    model.set_trainable(trainable)?;
    Ok(model)
}
