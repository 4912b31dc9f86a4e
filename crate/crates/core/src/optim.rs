//! LARS, Adam and the warmup-then-cosine learning-rate schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::model::{GradSet, ModelGraph};
use crate::nn::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub total_epochs: usize,
    pub warmup_fraction: f64,
    pub max_lr: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { total_epochs: 100, warmup_fraction: 0.1, max_lr: 0.3 }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.total_epochs > 0, InvalidArgument, "total_epochs must be positive");
        ensure!(
            (0.0..1.0).contains(&self.warmup_fraction),
            InvalidArgument,
            "warmup_fraction must be in [0, 1), got {}",
            self.warmup_fraction
        );
        ensure!(self.max_lr > 0.0 && self.max_lr.is_finite(), InvalidArgument, "max_lr must be positive");
        Ok(())
    }

    /// Warmup length `W = warmup_fraction * E` in epochs.
    pub fn warmup_epochs(&self) -> f64 {
        self.warmup_fraction * self.total_epochs as f64
    }
}

/// Learning rate for epoch `e` in `1..=E`.
pub fn lr_at_epoch(e: usize, cfg: &ScheduleConfig) -> f64 {
    let (e, total, w) = (e as f64, cfg.total_epochs as f64, cfg.warmup_epochs());
    if e <= w {
        cfg.max_lr * e / w
    } else {
        cfg.max_lr * 0.5 * (1.0 + (PI * (e - w) / (total - w)).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LarsConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub trust_coefficient: f64,
    /// Parameter names ending in this suffix skip weight decay, and trust
    /// scaling too under [`TrustScope::Tensor`].
    pub exempt_suffix: String,
    #[serde(default)]
    pub trust_scope: TrustScope,
}

/// What one trust ratio covers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustScope {
    /// Every tensor on its own; exempt tensors step with ratio 1.
    Tensor,
    /// Tensors sharing a layer prefix (`conv1.weight`, `conv1.bias`) share one ratio.
    #[default]
    Layer,
}

impl Default for LarsConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-6,
            trust_coefficient: 1e-3,
            exempt_suffix: ".bias".into(),
            trust_scope: TrustScope::Layer,
        }
    }
}

impl LarsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("trust_coefficient", self.trust_coefficient),
        ] {
            ensure!(v >= 0.0 && v.is_finite(), InvalidArgument, "{name} must be non-negative, got {v}");
        }
        Ok(())
    }

    pub fn is_exempt(&self, name: &str) -> bool {
        !self.exempt_suffix.is_empty() && name.ends_with(&self.exempt_suffix)
    }
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Trust ratio `eta * |w| / |g|`, or 1 when either norm vanishes.
pub fn trust_ratio(weight_norm: f64, grad_norm: f64, eta: f64) -> f64 {
    if weight_norm > 0.0 && grad_norm > 0.0 {
        eta * weight_norm / grad_norm
    } else {
        1.0
    }
}

/// One LARS update of a single tensor.
pub fn lars_update<T: Scalar>(
    w: &mut [T],
    grad: &[T],
    momentum: &mut [T],
    lr: f64,
    cfg: &LarsConfig,
    exempt: bool,
) -> Result<()> {
    ensure!(
        w.len() == grad.len() && w.len() == momentum.len(),
        Shape,
        "LARS buffers differ in length ({}, {}, {})",
        w.len(),
        grad.len(),
        momentum.len()
    );
    let wd = if exempt { 0.0 } else { cfg.weight_decay };
    let g: Vec<f64> = w.iter().zip(grad).map(|(w, g)| g.as_f64() + wd * w.as_f64()).collect();
    let r = if exempt {
        1.0
    } else {
        trust_ratio(l2(w.iter().map(|v| v.as_f64())), l2(g.iter().copied()), cfg.trust_coefficient)
    };
    for ((w, m), g) in w.iter_mut().zip(momentum.iter_mut()).zip(&g) {
        let next = cfg.momentum * m.as_f64() + r * lr * g;
        *m = T::from_f64_lossy(next);
        *w = T::from_f64_lossy(w.as_f64() - next);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lr > 0.0 && self.lr.is_finite(), InvalidArgument, "lr must be positive");
        ensure!((0.0..1.0).contains(&self.beta1), InvalidArgument, "beta1 must be in [0, 1)");
        ensure!((0.0..1.0).contains(&self.beta2), InvalidArgument, "beta2 must be in [0, 1)");
        ensure!(self.epsilon >= 0.0, InvalidArgument, "epsilon must be non-negative");
        Ok(())
    }
}

/// One bias-corrected Adam update of a single tensor at step `t >= 1`.
pub fn adam_update<T: Scalar>(
    w: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    cfg: &AdamConfig,
    t: u64,
) -> Result<()> {
    ensure!(
        w.len() == grad.len() && w.len() == m.len() && w.len() == v.len(),
        Shape,
        "Adam buffers differ in length"
    );
    ensure!(t >= 1, InvalidArgument, "Adam step count starts at 1");
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    for i in 0..w.len() {
        let g = grad[i].as_f64();
        let mi = cfg.beta1 * m[i].as_f64() + (1.0 - cfg.beta1) * g;
        let vi = cfg.beta2 * v[i].as_f64() + (1.0 - cfg.beta2) * g * g;
        m[i] = T::from_f64_lossy(mi);
        v[i] = T::from_f64_lossy(vi);
        let step = cfg.lr * (mi / c1) / ((vi / c2).sqrt() + cfg.epsilon);
        w[i] = T::from_f64_lossy(w[i].as_f64() - step);
    }
    Ok(())
}

/// Buffers shaped like the trainable tensors of a model.
fn zero_buffers<T: Scalar>(model: &ModelGraph<T>) -> Vec<Option<Vec<Tensor<T>>>> {
    GradSet::zeros_for(model).segments
}

fn check_layout<T: Scalar>(model: &ModelGraph<T>, grads: &GradSet<T>, state: &[Option<Vec<Tensor<T>>>]) -> Result<()> {
    ensure!(
        grads.segments.len() == model.segments().len() && state.len() == model.segments().len(),
        Shape,
        "optimizer state does not match the model"
    );
    for ((seg, g), s) in model.segments().iter().zip(&grads.segments).zip(state) {
        if seg.trainable != g.is_some() || seg.trainable != s.is_some() {
            return Err(Error::Shape(format!("trainable flags of segment {} changed since setup", seg.name)));
        }
    }
    Ok(())
}

/// One tensor's buffers inside a LARS layer update.
pub struct LarsSlot<'a, T> {
    pub weight: &'a mut [T],
    pub grad: &'a [T],
    pub momentum: &'a mut [T],
    pub exempt: bool,
}

/// LARS update of several tensors under one trust ratio taken over their
/// joint norms. Exempt tensors skip weight decay only.
pub fn lars_layer_update<T: Scalar>(slots: &mut [LarsSlot<'_, T>], lr: f64, cfg: &LarsConfig) -> Result<()> {
    let mut decayed = Vec::with_capacity(slots.len());
    for s in slots.iter() {
        ensure!(
            s.weight.len() == s.grad.len() && s.weight.len() == s.momentum.len(),
            Shape,
            "LARS buffers differ in length ({}, {}, {})",
            s.weight.len(),
            s.grad.len(),
            s.momentum.len()
        );
        let wd = if s.exempt { 0.0 } else { cfg.weight_decay };
        decayed.push(s.weight.iter().zip(s.grad).map(|(w, g)| g.as_f64() + wd * w.as_f64()).collect::<Vec<f64>>());
    }
    let w_norm = l2(slots.iter().flat_map(|s| s.weight.iter().map(|v| v.as_f64())));
    let g_norm = l2(decayed.iter().flatten().copied());
    let r = trust_ratio(w_norm, g_norm, cfg.trust_coefficient);
    for (s, g) in slots.iter_mut().zip(&decayed) {
        for ((w, m), g) in s.weight.iter_mut().zip(s.momentum.iter_mut()).zip(g) {
            let next = cfg.momentum * m.as_f64() + r * lr * g;
            *m = T::from_f64_lossy(next);
            *w = T::from_f64_lossy(w.as_f64() - next);
        }
    }
    Ok(())
}

fn layer_prefix(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(p, _)| p)
}

/// LARS over every trainable tensor of a model.
#[derive(Debug, Clone)]
pub struct Lars<T> {
    pub config: LarsConfig,
    momentum: Vec<Option<Vec<Tensor<T>>>>,
}

impl<T: Scalar> Lars<T> {
    pub fn new(config: LarsConfig, model: &ModelGraph<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, momentum: zero_buffers(model) })
    }

    pub fn step(&mut self, model: &mut ModelGraph<T>, grads: &GradSet<T>, lr: f64) -> Result<()> {
        check_layout(model, grads, &self.momentum)?;
        for ((seg, g), m) in model.segments_mut().iter_mut().zip(&grads.segments).zip(&mut self.momentum) {
            let (Some(g), Some(m)) = (g, m) else { continue };
            let names: Vec<String> = seg.params.entries().iter().map(|(n, _)| n.clone()).collect();
            let mut slots: Vec<(&str, LarsSlot<'_, T>)> = seg
                .params
                .tensors_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(&names)
                .map(|(((w, g), m), name)| {
                    let slot = LarsSlot {
                        weight: w.data_mut(),
                        grad: g.data(),
                        momentum: m.data_mut(),
                        exempt: self.config.is_exempt(name),
                    };
                    (name.as_str(), slot)
                })
                .collect();
            match self.config.trust_scope {
                TrustScope::Tensor => {
                    for (_, s) in &mut slots {
                        lars_update(s.weight, s.grad, s.momentum, lr, &self.config, s.exempt)?;
                    }
                }
                TrustScope::Layer => {
                    while !slots.is_empty() {
                        let prefix = layer_prefix(slots[0].0);
                        let take = slots.iter().take_while(|(n, _)| layer_prefix(n) == prefix).count();
                        let mut group: Vec<LarsSlot<'_, T>> = slots.drain(..take).map(|(_, s)| s).collect();
                        lars_layer_update(&mut group, lr, &self.config)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Adam over every trainable tensor of a model.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Option<Vec<Tensor<T>>>>,
    v: Vec<Option<Vec<Tensor<T>>>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, model: &ModelGraph<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, m: zero_buffers(model), v: zero_buffers(model), t: 0 })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, model: &mut ModelGraph<T>, grads: &GradSet<T>) -> Result<()> {
        check_layout(model, grads, &self.m)?;
        self.t += 1;
        let segs = model.segments_mut().iter_mut().zip(&grads.segments).zip(self.m.iter_mut().zip(&mut self.v));
        for ((seg, g), (m, v)) in segs {
            let (Some(g), Some(m), Some(v)) = (g, m, v) else { continue };
            for (((w, g), m), v) in seg.params.tensors_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                adam_update(w.data_mut(), g.data(), m.data_mut(), v.data_mut(), &self.config, self.t)?;
            }
        }
        Ok(())
    }
}
