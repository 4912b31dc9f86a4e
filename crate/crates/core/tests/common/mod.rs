//! Oracles and fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use chewing_ssl::model::{
    build_f, build_h, compose, Activation, ArchKind, ArchitectureSpec, LayerSpec, ModelGraph, ModelObjective,
    Segment, Shape,
};
use chewing_ssl::nn::{grad_check, GradCheckOptions, GradCheckReport, Tensor};
use chewing_ssl::postprocess::PostprocessConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// NT-Xent written straight from its definition: for every anchor `a` of the
/// `2n` rows, `-ln(exp(s(a, partner)) / sum_{k != a} exp(s(a, k)))`, averaged.
pub fn brute_ntxent(rows: &[Vec<f64>], tau: f64) -> f64 {
    let m = rows.len();
    let n = m / 2;
    let cos = |u: &[f64], v: &[f64]| {
        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        dot / (nu * nv)
    };
    let mut total = 0.0;
    for a in 0..m {
        let partner = (a + n) % m;
        let mut denom = 0.0;
        for k in 0..m {
            if k != a {
                denom += (cos(&rows[a], &rows[k]) / tau).exp();
            }
        }
        let num = (cos(&rows[a], &rows[partner]) / tau).exp();
        total += -(num / denom).ln();
    }
    total / m as f64
}

/// Chews, bouts and kept meals as plain `(start, end)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleOutput {
    pub chews: Vec<(f64, f64)>,
    pub bouts: Vec<(f64, f64)>,
    pub meals: Vec<(f64, f64)>,
}

/// Splits a start-sorted list wherever the next start lies more than `gap`
/// after everything seen so far in the current group.
fn group_by_gap(items: &[(f64, f64)], gap: f64) -> Vec<Vec<(f64, f64)>> {
    let mut groups: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut reach = f64::NEG_INFINITY;
    for &(s, e) in items {
        if groups.is_empty() || s - reach > gap {
            groups.push(Vec::new());
            reach = e;
        }
        reach = reach.max(e);
        groups.last_mut().unwrap().push((s, e));
    }
    groups
}

fn hull(group: &[(f64, f64)]) -> (f64, f64) {
    let end = group.iter().map(|g| g.1).fold(f64::NEG_INFINITY, f64::max);
    (group[0].0, end)
}

/// Independent reading of the aggregation rules.
pub fn rule_interpreter(starts: &[f64], scores: &[f64], window_s: f64, cfg: &PostprocessConfig) -> RuleOutput {
    let above: Vec<bool> = scores.iter().map(|&s| s >= cfg.score_threshold).collect();
    let mut chews = Vec::new();
    let mut i = 0;
    while i < above.len() {
        if !above[i] {
            i += 1;
            continue;
        }
        let first = i;
        while i + 1 < above.len() && above[i + 1] {
            i += 1;
        }
        chews.push((starts[first], starts[i] + window_s));
        i += 1;
    }

    let bouts: Vec<(f64, f64)> = group_by_gap(&chews, cfg.max_chew_gap_s)
        .iter()
        .map(|g| hull(g))
        .filter(|&(s, e)| e - s >= cfg.min_bout_s)
        .collect();

    let meals = group_by_gap(&bouts, cfg.max_bout_gap_s)
        .iter()
        .filter_map(|g| {
            let (s, e) = hull(g);
            let busy: f64 = g.iter().map(|b| b.1 - b.0).sum();
            (busy / (e - s) >= cfg.min_meal_ratio).then_some((s, e))
        })
        .collect();

    RuleOutput { chews, bouts, meals }
}

/// Random pulse track whose start increments make gaps land exactly on the
/// default rule thresholds. Returns `(starts, scores, window_s)`.
pub fn random_track(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, f64) {
    let window_s = 1.0;
    let steps = [0.5, 1.0, 1.0, 1.0, 2.0, 3.0, 3.0, 3.25, 20.0, 61.0, 61.0, 61.5];
    let len = rng.random_range(0..200);
    let mut t = rng.random_range(0..4) as f64 * 0.25;
    let mut starts = Vec::with_capacity(len);
    let mut scores = Vec::with_capacity(len);
    let mut on = rng.random_bool(0.5);
    for _ in 0..len {
        starts.push(t);
        if rng.random_bool(0.3) {
            on = !on;
        }
        let s: f64 = if rng.random_bool(0.05) {
            0.5
        } else if on {
            rng.random_range(0.5..=1.0)
        } else {
            rng.random_range(0.0..0.5)
        };
        scores.push(s);
        t += steps[rng.random_range(0..steps.len())];
    }
    (starts, scores, window_s)
}

/// Single-layer networks covering every layer type and activation.
pub fn layer_cases() -> Vec<(&'static str, ArchitectureSpec)> {
    let signal = |channels, len, layer| ArchitectureSpec {
        kind: ArchKind::FeatureExtractor,
        input: Shape::Signal { channels, len },
        layers: vec![layer],
    };
    let vector = |dim, layer| ArchitectureSpec { kind: ArchKind::Classifier, input: Shape::Vector { dim }, layers: vec![layer] };
    vec![
        ("conv_linear", signal(3, 48, LayerSpec::Conv { out_channels: 4, kernel_len: 7, activation: Activation::Linear })),
        ("conv_relu", signal(3, 48, LayerSpec::Conv { out_channels: 4, kernel_len: 7, activation: Activation::Relu })),
        ("conv_k1", signal(5, 20, LayerSpec::Conv { out_channels: 3, kernel_len: 1, activation: Activation::Linear })),
        ("maxpool2", signal(3, 31, LayerSpec::MaxPool2)),
        ("adaptive_maxpool", signal(3, 37, LayerSpec::AdaptiveMaxPool { target_len: 8 })),
        ("flatten", signal(3, 10, LayerSpec::Flatten)),
        ("dense_linear", vector(24, LayerSpec::Dense { width: 10, activation: Activation::Linear })),
        ("dense_relu", vector(24, LayerSpec::Dense { width: 10, activation: Activation::Relu })),
        ("dense_sigmoid", vector(24, LayerSpec::Dense { width: 10, activation: Activation::Sigmoid })),
    ]
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, uniform_vec(rng, n, -1.0, 1.0)).unwrap()
}

/// Checks every parameter and input coordinate of one layer case, with random
/// biases so that no parameter sits at its initial zero.
pub fn check_layer(arch: &ArchitectureSpec, seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let mut seg = Segment::<f64>::initialized("layer", arch.clone(), seed).unwrap();
    for t in seg.params.tensors_mut() {
        if t.rank() == 1 {
            t.data_mut().iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5));
        }
    }
    let model = ModelGraph::new(vec![seg]).unwrap();
    let out_len: usize = model.output_shape().dims().iter().product();
    let projection = uniform_vec(&mut r, out_len, -1.0, 1.0);
    let x = random_tensor(&arch.input.dims(), &mut r);
    let mut obj = ModelObjective::new(model, projection);
    grad_check(&mut obj, &x, &GradCheckOptions { seed, ..Default::default() })
}

/// Sampled check of the whole classifier `h∘f` on one random window.
pub fn check_full_network(seed: u64, coords_per_group: usize, input_coords: usize) -> GradCheckReport {
    let model = compose(vec![build_f::<f64>(seed), build_h::<f64>(seed + 1)], &["f", "h"]).unwrap();
    let mut obj = ModelObjective::new(model, vec![1.0]);
    let mut r = rng(seed ^ 0xfeed);
    let x = random_tensor(&[1, chewing_ssl::model::WINDOW_LEN], &mut r);
    let opts = GradCheckOptions {
        coords_per_group: Some(coords_per_group),
        input_coords: Some(input_coords),
        seed,
        ..Default::default()
    };
    grad_check(&mut obj, &x, &opts)
}

fn snapshot(model: &ModelGraph<f32>, frozen: &[&str]) -> Vec<Vec<u32>> {
    model
        .segments()
        .iter()
        .filter(|s| frozen.contains(&s.name.as_str()))
        .flat_map(|s| s.params.tensors().map(|t| t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

fn trainable_norm(model: &ModelGraph<f32>) -> f64 {
    model.segments().iter().filter(|s| s.trainable).flat_map(|s| s.params.tensors()).map(|t| t.norm()).sum()
}

/// Runs `steps` optimizer updates on two stacks with frozen pieces and
/// returns an error naming the first frozen stack whose bits changed.
pub fn frozen_segments_stay_bit_identical(steps: usize) -> Result<(), String> {
    use chewing_ssl::model::{build_g_nonlinear, split_g_nonlinear, GradSet};
    use chewing_ssl::optim::{Adam, AdamConfig, Lars, LarsConfig};

    let mut r = rng(21);
    let window = Tensor::<f64>::from_vec(&[1, chewing_ssl::model::WINDOW_LEN], uniform_vec(&mut r, chewing_ssl::model::WINDOW_LEN, -0.05, 0.05))
        .unwrap()
        .cast::<f32>();
    let features = Tensor::<f64>::vector(&uniform_vec(&mut r, 512, 0.0, 1.0)).cast::<f32>();

    let (g1, g2) = split_g_nonlinear(&build_g_nonlinear::<f32>(3)).unwrap();
    let mut head = compose(vec![g1.clone(), build_h::<f32>(4)], &["h"]).unwrap();
    let mut middle = compose(vec![build_f::<f32>(5), g1, g2], &["f", "g_nl2"]).unwrap();

    let cases: [(&str, &mut ModelGraph<f32>, &Tensor<f32>, &[&str]); 2] =
        [("g_nl1 + h", &mut head, &features, &["g_nl1"]), ("f + g_nl1 + g_nl2", &mut middle, &window, &["g_nl1"])];
    for (i, (label, model, x, frozen)) in cases.into_iter().enumerate() {
        let before = snapshot(model, frozen);
        let trained_before = trainable_norm(model);
        let mut adam = Adam::new(AdamConfig::default(), model).unwrap();
        let mut lars = Lars::new(LarsConfig::default(), model).unwrap();
        for step in 0..steps {
            let (y, trace) = model.forward_trace(x).unwrap();
            let upstream = Tensor::filled(y.shape(), 1.0f32);
            let mut grads = GradSet::zeros_for(model);
            model.backward(&trace, upstream, &mut grads, false).unwrap();
            if i == 0 {
                adam.step(model, &grads).unwrap();
            } else {
                lars.step(model, &grads, 0.1).unwrap();
            }
            if snapshot(model, frozen) != before {
                return Err(format!("{label}: frozen tensors changed at step {}", step + 1));
            }
        }
        if trainable_norm(model) == trained_before {
            return Err(format!("{label}: trainable tensors never moved"));
        }
    }
    Ok(())
}
