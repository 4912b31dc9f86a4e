//! Global amplification, additive uniform noise and contrastive batch doubling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub amp_low: f64,
    pub amp_high: f64,
    pub noise_bound: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { amp_low: 0.5, amp_high: 2.0, noise_bound: 0.005, seed: 0 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.amp_low > 0.0 && self.amp_low <= self.amp_high && self.amp_high.is_finite(),
            InvalidArgument,
            "amplification range must satisfy 0 < amp_low <= amp_high, got [{}, {}]",
            self.amp_low,
            self.amp_high
        );
        ensure!(
            self.noise_bound >= 0.0 && self.noise_bound.is_finite(),
            InvalidArgument,
            "noise_bound must be non-negative"
        );
        Ok(())
    }
}

/// Which augmentation produced a view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentView {
    Amplify = 1,
    Noise = 2,
}

/// Generator for one (epoch, window, view) triple, independent of batch composition.
pub fn view_rng(seed: u64, epoch: u64, index: u64, view: AugmentView) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_mul(0x1_0000_0001).wrapping_add(view as u64));
    rng.set_word_pos(u128::from(index) << 40);
    rng
}

fn uniform(rng: &mut impl Rng, low: f64, high: f64) -> f64 {
    if low == high {
        low
    } else {
        rng.random_range(low..=high)
    }
}

/// `alpha * x` with `alpha ~ U[amp_low, amp_high]`, one draw per call.
pub fn amplify(x: &[f32], cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<f32> {
    let alpha = uniform(rng, cfg.amp_low, cfg.amp_high);
    x.iter().map(|&v| (alpha * v as f64) as f32).collect()
}

/// `x + v` with `v` i.i.d. `U[-noise_bound, noise_bound]` per sample.
pub fn add_noise(x: &[f32], cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<f32> {
    let b = cfg.noise_bound;
    x.iter().map(|&v| (v as f64 + uniform(rng, -b, b)) as f32).collect()
}

/// `2n` views ordered `[T1(x_1)..T1(x_n), T2(x_1)..T2(x_n)]`; view `i` pairs with `i + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub samples: Vec<Vec<f32>>,
    pub n: usize,
}

/// Doubles a batch. `indices[i]` is the dataset index of `windows[i]`, which
/// together with `epoch` fixes that window's augmentation stream.
pub fn double_batch(
    windows: &[&[f32]],
    indices: &[u64],
    epoch: u64,
    cfg: &AugmentConfig,
) -> Result<ContrastiveBatch> {
    let n = windows.len();
    ensure!(n >= 2, InvalidArgument, "a contrastive batch needs at least 2 windows, got {n}");
    ensure!(indices.len() == n, Shape, "{} indices for {n} windows", indices.len());
    cfg.validate()?;
    let first: Vec<Vec<f32>> = windows
        .par_iter()
        .zip(indices)
        .map(|(x, &i)| amplify(x, cfg, &mut view_rng(cfg.seed, epoch, i, AugmentView::Amplify)))
        .collect();
    let second: Vec<Vec<f32>> = windows
        .par_iter()
        .zip(indices)
        .map(|(x, &i)| add_noise(x, cfg, &mut view_rng(cfg.seed, epoch, i, AugmentView::Noise)))
        .collect();
    let mut samples = first;
    samples.extend(second);
    Ok(ContrastiveBatch { samples, n })
}
