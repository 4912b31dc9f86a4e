use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of one input window (5 s at 2 kHz).
pub const WINDOW_LEN: usize = 10_000;
/// Dimension of the feature vector produced by the extractor.
pub const FEATURE_DIM: usize = 512;
/// Dimension of the contrastive embedding produced by either projection head.
pub const EMBEDDING_DIM: usize = 128;
/// Width of the classifier's hidden layers.
pub const HEAD_WIDTH: usize = 200;
/// Temporal bins kept by the extractor's final adaptive max-pool.
pub const FEATURE_BINS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel_len: usize, activation: Activation },
    MaxPool2,
    AdaptiveMaxPool { target_len: usize },
    Flatten,
    Dense { width: usize, activation: Activation },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Signal { channels: usize, len: usize },
    Vector { dim: usize },
}

impl Shape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Signal { channels, len } => vec![channels, len],
            Shape::Vector { dim } => vec![dim],
        }
    }
}

/// Which of the network pieces an architecture is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    /// Convolutional feature extractor, window -> 512 features.
    FeatureExtractor,
    /// Single linear layer projection head.
    LinearProjection,
    /// Three-layer non-linear projection head.
    NonLinearProjection,
    /// First layer of the non-linear projection head.
    NonLinearProjectionFirst,
    /// Second and third layers of the non-linear projection head.
    NonLinearProjectionRest,
    /// Classifier head producing the chewing probability.
    Classifier,
}

impl ArchKind {
    pub(crate) fn tag(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        use ArchKind::*;
        [
            FeatureExtractor,
            LinearProjection,
            NonLinearProjection,
            NonLinearProjectionFirst,
            NonLinearProjectionRest,
            Classifier,
        ]
        .into_iter()
        .find(|k| k.tag() == tag)
    }
}

/// Ordered layer list with its input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub kind: ArchKind,
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl ArchitectureSpec {
    /// Conv/pool stack of the feature extractor.
    pub fn feature_extractor() -> Self {
        let relu = Activation::Relu;
        let mut layers = Vec::new();
        for (out_channels, kernel_len) in [(8, 16), (16, 16), (32, 16), (64, 16), (64, 39)] {
            layers.push(LayerSpec::Conv { out_channels, kernel_len, activation: relu });
            layers.push(LayerSpec::MaxPool2);
        }
        layers.push(LayerSpec::AdaptiveMaxPool { target_len: FEATURE_BINS });
        layers.push(LayerSpec::Flatten);
        Self {
            kind: ArchKind::FeatureExtractor,
            input: Shape::Signal { channels: 1, len: WINDOW_LEN },
            layers,
        }
    }

    pub fn linear_projection() -> Self {
        Self {
            kind: ArchKind::LinearProjection,
            input: Shape::Vector { dim: FEATURE_DIM },
            layers: vec![LayerSpec::Dense { width: EMBEDDING_DIM, activation: Activation::Linear }],
        }
    }

    pub fn nonlinear_projection() -> Self {
        Self {
            kind: ArchKind::NonLinearProjection,
            input: Shape::Vector { dim: FEATURE_DIM },
            layers: vec![
                LayerSpec::Dense { width: 512, activation: Activation::Relu },
                LayerSpec::Dense { width: 512, activation: Activation::Relu },
                LayerSpec::Dense { width: EMBEDDING_DIM, activation: Activation::Linear },
            ],
        }
    }

    pub fn classifier(input_dim: usize) -> Self {
        Self {
            kind: ArchKind::Classifier,
            input: Shape::Vector { dim: input_dim },
            layers: vec![
                LayerSpec::Dense { width: HEAD_WIDTH, activation: Activation::Relu },
                LayerSpec::Dense { width: HEAD_WIDTH, activation: Activation::Relu },
                LayerSpec::Dense { width: 1, activation: Activation::Sigmoid },
            ],
        }
    }

    /// Shapes flowing between layers: `shapes[0]` is the input, `shapes[i + 1]`
    /// the output of layer `i`. Fails on any incompatible layer.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = vec![self.input];
        let mut cur = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |what: String| Error::Shape(format!("layer {i} ({layer:?}): {what}"));
            cur = match (*layer, cur) {
                (LayerSpec::Conv { out_channels, kernel_len, .. }, Shape::Signal { len, .. }) => {
                    if kernel_len == 0 || out_channels == 0 || len < kernel_len {
                        return Err(bad(format!("input length {len}")));
                    }
                    Shape::Signal { channels: out_channels, len: len - kernel_len + 1 }
                }
                (LayerSpec::MaxPool2, Shape::Signal { channels, len }) => {
                    if len < 2 {
                        return Err(bad(format!("input length {len}")));
                    }
                    Shape::Signal { channels, len: len / 2 }
                }
                (LayerSpec::AdaptiveMaxPool { target_len }, Shape::Signal { channels, len }) => {
                    if target_len == 0 || len < target_len {
                        return Err(bad(format!("input length {len}")));
                    }
                    Shape::Signal { channels, len: target_len }
                }
                (LayerSpec::Flatten, Shape::Signal { channels, len }) => Shape::Vector { dim: channels * len },
                (LayerSpec::Dense { width, .. }, Shape::Vector { .. }) if width > 0 => Shape::Vector { dim: width },
                (_, s) => return Err(bad(format!("incompatible input {s:?}"))),
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn output(&self) -> Result<Shape> {
        Ok(*self.shapes()?.last().expect("input shape present"))
    }

    /// Shapes of the parameter tensors in storage order, paired with default names.
    pub fn param_layout(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let shapes = self.shapes()?;
        let mut out = Vec::new();
        let (mut conv_n, mut dense_n) = (0, 0);
        for (layer, input) in self.layers.iter().zip(&shapes) {
            match (*layer, *input) {
                (LayerSpec::Conv { out_channels, kernel_len, .. }, Shape::Signal { channels, .. }) => {
                    conv_n += 1;
                    out.push((format!("conv{conv_n}.weight"), vec![out_channels, channels, kernel_len]));
                    out.push((format!("conv{conv_n}.bias"), vec![out_channels]));
                }
                (LayerSpec::Dense { width, .. }, Shape::Vector { dim }) => {
                    dense_n += 1;
                    out.push((format!("dense{dense_n}.weight"), vec![width, dim]));
                    out.push((format!("dense{dense_n}.bias"), vec![width]));
                }
                _ => {}
            }
        }
        Ok(out)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_layout()?.iter().map(|(_, s)| s.iter().product::<usize>()).sum())
    }
}
