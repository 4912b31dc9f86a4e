//! Central finite-difference verification of analytic gradients.

use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// A scalar-valued double-precision function of parameters and an input.
pub trait Differentiable {
    /// Named contiguous ranges of the flat parameter vector.
    fn param_groups(&self) -> Vec<(String, Range<usize>)>;
    fn param(&self, index: usize) -> f64;
    fn set_param(&mut self, index: usize, value: f64);
    /// Objective value plus a hash of every discrete branch taken (ReLU
    /// signs, pooling argmax). Perturbations that change the hash crossed a
    /// kink and are not comparable with the analytic gradient.
    fn evaluate(&self, input: &Tensor<f64>) -> (f64, u64);
    /// Analytic gradient with respect to the flat parameters and the input.
    fn gradients(&self, input: &Tensor<f64>) -> (Vec<f64>, Tensor<f64>);
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates checked per parameter group; `None` checks all of them.
    pub coords_per_group: Option<usize>,
    /// Input coordinates checked; `None` checks all of them.
    pub input_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-6, coords_per_group: None, input_coords: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub max_relative_error: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    pub skipped_at_kinks: usize,
    pub groups: Vec<GroupError>,
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

fn pick(range: Range<usize>, limit: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = range.len();
    match limit {
        Some(k) if k < n => {
            let mut idx: Vec<usize> = sample(rng, n, k).into_iter().map(|i| range.start + i).collect();
            idx.sort_unstable();
            idx
        }
        _ => range.collect(),
    }
}

/// Compares analytic gradients against central differences.
///
/// Returns the largest relative error over every checked parameter and
/// input coordinate.
pub fn grad_check(f: &mut dyn Differentiable, input: &Tensor<f64>, opts: &GradCheckOptions) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = opts.step;
    let (_, base_sig) = f.evaluate(input);
    let (param_grad, input_grad) = f.gradients(input);

    let mut groups = Vec::new();
    let mut skipped = 0;

    for (name, range) in f.param_groups() {
        let mut g = GroupError { name, max_relative_error: 0.0, checked: 0 };
        for i in pick(range, opts.coords_per_group, &mut rng) {
            let orig = f.param(i);
            f.set_param(i, orig + h);
            let (plus, sp) = f.evaluate(input);
            f.set_param(i, orig - h);
            let (minus, sm) = f.evaluate(input);
            f.set_param(i, orig);
            if sp != base_sig || sm != base_sig {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            g.max_relative_error = g.max_relative_error.max(relative_error(param_grad[i], numeric));
            g.checked += 1;
        }
        groups.push(g);
    }

    let mut g = GroupError { name: "input".into(), max_relative_error: 0.0, checked: 0 };
    let mut x = input.clone();
    for i in pick(0..input.len(), opts.input_coords, &mut rng) {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let (plus, sp) = f.evaluate(&x);
        x.data_mut()[i] = orig - h;
        let (minus, sm) = f.evaluate(&x);
        x.data_mut()[i] = orig;
        if sp != base_sig || sm != base_sig {
            skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        g.max_relative_error = g.max_relative_error.max(relative_error(input_grad.data()[i], numeric));
        g.checked += 1;
    }
    groups.push(g);

    GradCheckReport {
        max_relative_error: groups.iter().map(|g| g.max_relative_error).fold(0.0, f64::max),
        checked: groups.iter().map(|g| g.checked).sum(),
        skipped_at_kinks: skipped,
        groups,
    }
}

/// FNV-1a accumulator used to fingerprint branch decisions.
#[derive(Debug, Clone, Copy)]
pub struct BranchHasher(u64);

impl Default for BranchHasher {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl BranchHasher {
    pub fn push(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}
