//! The nine acceptance criteria, run in order with one PASS/FAIL line each.
//!
//! Run with `cargo test -p chewing-ssl-cli --test acceptance`. The criteria run
//! sequentially inside a single test so that the timed ones do not compete
//! for CPU with each other.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use chewing_ssl::dataset::{label_windows, synthesize_recording, SynthParams};
use chewing_ssl::interval::Interval;
use chewing_ssl::model::{build_f, build_g_linear, build_g_nonlinear, build_h, FEATURE_DIM, WINDOW_LEN};
use chewing_ssl::nn::Tensor;
use chewing_ssl::objective::{ntxent_batch, EmbeddingBatch, Temperature};
use chewing_ssl::optim::{adam_update, lars_update, lr_at_epoch, AdamConfig, LarsConfig, ScheduleConfig, TrustScope};
use chewing_ssl::postprocess::{pipeline, PostprocessConfig, PredictionTrack};
use chewing_ssl::signal::{decimate, design_highpass_butterworth, TimeSeries};
use chewing_ssl::train::{cache_features, fit, HeadTrainConfig, Supervised};
use common::*;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(limit: Duration, start: Instant, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    check(took < limit, format!("{what} took {:.1} s, limit {} s", took.as_secs_f64(), limit.as_secs()))
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst_layer: f64 = 0.0;
    for (name, arch) in layer_cases() {
        for seed in 0..3 {
            let report = check_layer(&arch, seed);
            check(report.checked > 0, format!("{name}: no coordinate checked"))?;
            check(report.max_relative_error < 1e-5, format!("{name}: relative error {:e}", report.max_relative_error))?;
            worst_layer = worst_layer.max(report.max_relative_error);
        }
    }
    let mut worst_full: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..5 {
        let report = check_full_network(100 + seed, 6, 12);
        check(
            report.max_relative_error < 1e-4,
            format!("h∘f input {seed}: relative error {:e}", report.max_relative_error),
        )?;
        worst_full = worst_full.max(report.max_relative_error);
        checked += report.checked;
    }
    within(Duration::from_secs(120), start, "gradient checks")?;
    Ok(format!(
        "worst layer error {worst_layer:.1e}, worst h∘f error {worst_full:.1e} over {checked} coordinates, {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

fn ntxent_oracle() -> Outcome {
    let mut r = rng(2024);
    let taus = [0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 100.0];
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = [2, 4, 8][r.random_range(0..3)];
        let d = [4, 8, 128][r.random_range(0..3)];
        let tau = taus[r.random_range(0..taus.len())];
        let rows: Vec<Vec<f64>> = (0..2 * n).map(|_| uniform_vec(&mut r, d, -1.0, 1.0)).collect();
        let batch = EmbeddingBatch::from_views(&rows[..n], &rows[n..]).map_err(|e| e.to_string())?;
        let diff = (ntxent_batch(&batch, Temperature::new(tau).unwrap()) - brute_ntxent(&rows, tau)).abs();
        check(diff < 1e-10, format!("n={n} d={d} tau={tau}: difference {diff:e}"))?;
        worst = worst.max(diff);
    }
    let tau = Temperature::new(1.0).unwrap();
    let single = EmbeddingBatch::from_views(&[vec![1.0, -2.0, 0.5]], &[vec![0.3, 0.1, 4.0]]).unwrap();
    let l1 = ntxent_batch(&single, tau);
    check(l1 == 0.0, format!("n=1 loss {l1}"))?;
    let same = vec![vec![0.2, -0.7, 1.1]; 2];
    let l2 = ntxent_batch(&EmbeddingBatch::from_views(&same, &same).unwrap(), tau);
    check((l2 - 3f64.ln()).abs() < 1e-12, format!("identical n=2 loss {l2}"))?;
    Ok(format!("1000 batches, worst difference {worst:.1e}; n=1 loss 0, identical n=2 loss ln 3"))
}

fn architecture() -> Outcome {
    let mut r = rng(3);
    let f = build_f::<f64>(3);
    let x = Tensor::from_vec(&[1, WINDOW_LEN], uniform_vec(&mut r, WINDOW_LEN, -0.5, 0.5)).unwrap();
    let feats = f.forward(&x).map_err(|e| e.to_string())?;
    check(feats.shape() == [FEATURE_DIM], format!("f output shape {:?}", feats.shape()))?;
    for (name, g) in [("g^L", build_g_linear::<f64>(3)), ("g^NL", build_g_nonlinear::<f64>(3))] {
        let z = g.forward(&feats).map_err(|e| e.to_string())?;
        check(z.shape() == [128], format!("{name} output shape {:?}", z.shape()))?;
    }
    let h = build_h::<f64>(3);
    for scale in [1e-3, 1.0, 1e2, 1e4] {
        for _ in 0..25 {
            let v = Tensor::vector(&uniform_vec(&mut r, FEATURE_DIM, -scale, scale));
            let p = h.forward(&v).map_err(|e| e.to_string())?.data()[0];
            check(p > 0.0 && p < 1.0, format!("h output {p} at input scale {scale}"))?;
        }
    }
    frozen_segments_stay_bit_identical(100)?;
    Ok("f: 10000 -> 512, g^L/g^NL -> 128, h in (0,1), frozen tensors bit-identical over 100 steps".into())
}

fn schedule_and_optimizers() -> Outcome {
    let cfg = ScheduleConfig::default();
    for (e, want) in [(10, 0.3), (55, 0.15), (100, 0.0)] {
        let got = lr_at_epoch(e, &cfg);
        check(got == want, format!("lr at epoch {e} is {got}, want {want}"))?;
    }
    let mut r = rng(4);
    let lars = LarsConfig { momentum: 0.0, weight_decay: 0.0, trust_scope: TrustScope::Tensor, ..LarsConfig::default() };
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let w = uniform_vec(&mut r, 50, -1.0, 1.0);
        let g = uniform_vec(&mut r, 50, -1.0, 1.0);
        let lr = r.random_range(1e-4..1.0);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (cfg, exempt) = if trial % 2 == 0 {
            (lars.clone(), true)
        } else {
            (LarsConfig { trust_coefficient: norm(&g) / norm(&w), ..lars.clone() }, false)
        };
        let mut got = w.clone();
        let mut m = vec![0.0; w.len()];
        lars_update(&mut got, &g, &mut m, lr, &cfg, exempt).map_err(|e| e.to_string())?;
        for ((a, w), g) in got.iter().zip(&w).zip(&g) {
            worst = worst.max((a - (w - lr * g)).abs());
        }
    }
    check(worst < 1e-12, format!("LARS differs from SGD by {worst:e}"))?;
    for _ in 0..200 {
        let lr = r.random_range(1e-5..1e-1);
        let scale = 10f64.powi(r.random_range(-9..4));
        let g = uniform_vec(&mut r, 64, -scale, scale);
        let mut w = vec![0.0; 64];
        let (mut m, mut v) = (vec![0.0; 64], vec![0.0; 64]);
        adam_update(&mut w, &g, &mut m, &mut v, &AdamConfig { lr, ..AdamConfig::default() }, 1)
            .map_err(|e| e.to_string())?;
        let step = w.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        check(step <= lr * (1.0 + 1e-12), format!("Adam first step {step} exceeds lr {lr}"))?;
    }
    Ok(format!("lr(10,55,100) = 0.3/0.15/0; LARS vs SGD worst {worst:.1e}; Adam first step <= lr"))
}

/// One-second windows whose scoring runs are `(first start, count)`.
fn boundary_track(on: &[(f64, usize)]) -> (Vec<f64>, Vec<f64>) {
    let (mut starts, mut scores) = (Vec::new(), Vec::new());
    for &(t0, count) in on {
        if let Some(&last) = starts.last() {
            if t0 - last > 1.0 {
                starts.push(last + 1.0);
                scores.push(0.0);
            }
        }
        for k in 0..count {
            starts.push(t0 + k as f64);
            scores.push(0.9);
        }
    }
    (starts, scores)
}

fn postprocess_oracle() -> Outcome {
    let start = Instant::now();
    let cfg = PostprocessConfig::default();
    let run = |starts: &[f64], scores: &[f64], w: f64| -> Result<RuleOutput, String> {
        let track = PredictionTrack::new(starts.to_vec(), scores.to_vec(), w).map_err(|e| e.to_string())?;
        let out = pipeline(&track, &cfg).map_err(|e| e.to_string())?;
        Ok(RuleOutput {
            chews: out.chews.iter().map(|c| (c.start_s, c.end_s)).collect(),
            bouts: out.bouts.iter().map(|b| (b.interval.start_s, b.interval.end_s)).collect(),
            meals: out.meals.iter().map(|m| (m.interval.start_s, m.interval.end_s)).collect(),
        })
    };
    let mut r = rng(5);
    let mut meals = 0;
    for i in 0..1000 {
        let (starts, scores, w) = random_track(&mut r);
        let got = run(&starts, &scores, w)?;
        check(got == rule_interpreter(&starts, &scores, w, &cfg), format!("track {i} disagrees"))?;
        meals += got.meals.len();
    }
    let cases: [(&str, &[(f64, usize)], fn(&RuleOutput) -> bool); 4] = [
        ("chew gap 2.0 s merges", &[(0.0, 3), (5.0, 3)], |o| o.bouts == [(0.0, 8.0)]),
        ("bout of 5.0 s kept", &[(0.0, 5)], |o| o.bouts == [(0.0, 5.0)]),
        ("bout gap 60.0 s merges", &[(0.0, 40), (100.0, 40)], |o| o.meals == [(0.0, 140.0)]),
        ("meal ratio 25% kept", &[(0.0, 10), (70.0, 10)], |o| o.meals == [(0.0, 80.0)]),
    ];
    for (label, on, ok) in cases {
        let (starts, scores) = boundary_track(on);
        let out = run(&starts, &scores, 1.0)?;
        check(out == rule_interpreter(&starts, &scores, 1.0, &cfg), format!("{label}: oracle disagrees"))?;
        check(ok(&out), format!("{label}: got {out:?}"))?;
    }
    within(Duration::from_secs(30), start, "post-processing oracle")?;
    Ok(format!(
        "1000 tracks ({meals} meals) and 4 boundary cases agree, {:.2} s",
        start.elapsed().as_secs_f64()
    ))
}

fn dsp() -> Outcome {
    let hp = design_highpass_butterworth(20.0, 2000.0, 4).map_err(|e| e.to_string())?;
    let at_cutoff = hp.magnitude_db(20.0);
    check((at_cutoff + 3.01).abs() <= 0.1, format!("{at_cutoff:.3} dB at 20 Hz"))?;
    let at_2 = hp.magnitude_db(2.0);
    check(at_2 <= -40.0, format!("{at_2:.1} dB at 2 Hz"))?;
    check(hp.magnitude(0.0) == 0.0, format!("DC gain {}", hp.magnitude(0.0)))?;
    let rate = 48_000.0;
    let x = TimeSeries::new(
        (0..48_000).map(|i| (2.0 * std::f64::consts::PI * 100.0 * i as f64 / rate).sin()).collect(),
        rate,
    )
    .unwrap();
    let y = decimate(&x, 24).map_err(|e| e.to_string())?;
    let interior = &y.samples()[100..y.len() - 100];
    let peak = interior.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    check((peak - 1.0).abs() <= 0.01, format!("decimated amplitude {peak:.4}"))?;
    Ok(format!("{at_cutoff:.3} dB at 20 Hz, {at_2:.1} dB at 2 Hz, DC null; decimated 100 Hz amplitude {peak:.4}"))
}

fn chewssl(root: &Path, args: &[&str], extra: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_chewssl"))
        .args(extra)
        .args(args)
        .env("CHEWSSL_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    check(
        out.status.success(),
        format!("`chewssl {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)),
    )
}

const CHAIN: [&str; 5] = ["synth", "preprocess", "pretrain", "train-head", "holdout"];

fn smoke() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    for cmd in CHAIN {
        chewssl(dir.path(), &[cmd], &["--preset", "small"])?;
    }
    let took = start.elapsed();
    let text = std::fs::read_to_string(dir.path().join("runs/holdout/report.json")).map_err(|e| e.to_string())?;
    let rows: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let rows = rows.as_array().ok_or("report is not a list")?;
    check(rows.len() == 4, format!("{} report rows", rows.len()))?;
    let mut summary = Vec::new();
    let mut low = Vec::new();
    for row in rows {
        let name = row["model"].as_str().unwrap_or("?").to_owned();
        let f1 = row["report"]["f1"].as_f64().unwrap_or(0.0);
        if f1 <= 0.8 {
            low.push(format!("{name} F1 {f1:.3}"));
        }
        summary.push(format!("{name} {f1:.3}"));
    }
    check(low.is_empty(), format!("{}; all: {}", low.join(", "), summary.join(", ")))?;
    check(took < Duration::from_secs(15 * 60), format!("run took {:.0} s", took.as_secs_f64()))?;
    Ok(format!("F1 {} in {:.0} s", summary.join(", "), took.as_secs_f64()))
}

fn overfit() -> Outcome {
    let params = SynthParams {
        subject_id: "overfit".into(),
        duration_s: 170.0,
        meal_spans: vec![Interval { start_s: 40.0, end_s: 130.0 }],
        seed: 8,
        ..SynthParams::default()
    };
    let rec = synthesize_recording(&params).and_then(|r| r.preprocessed()).map_err(|e| e.to_string())?;
    let windows = label_windows(&rec, WINDOW_LEN, WINDOW_LEN / 2, 0.5).map_err(|e| e.to_string())?;
    let pos = windows.iter().filter(|w| w.label).take(16);
    let neg = windows.iter().filter(|w| !w.label).take(16);
    let chosen: Vec<_> = pos.chain(neg).collect();
    check(chosen.len() == 32, format!("only {} windows", chosen.len()))?;
    let inputs: Vec<Tensor<f32>> = chosen
        .iter()
        .map(|w| Tensor::from_vec(&[1, WINDOW_LEN], w.window.clone()).unwrap())
        .collect();
    let features = cache_features(&build_f::<f32>(8), &inputs).map_err(|e| e.to_string())?;
    let data = Supervised::new(features, chosen.iter().map(|w| w.label).collect()).map_err(|e| e.to_string())?;
    let cfg = HeadTrainConfig { batch_size: 32, epochs: 500, adam: AdamConfig::default(), seed: 8 };
    let result = fit(build_h::<f32>(8), &data, &data, &cfg).map_err(|e| e.to_string())?;
    let best = result.val_losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hit = result.val_losses.iter().position(|&l| l < 0.05);
    match hit {
        Some(step) => Ok(format!("BCE < 0.05 after {} Adam steps (best {best:.4})", step + 1)),
        None => Err(format!("best BCE {best:.4} after 500 Adam steps")),
    }
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tiny = [
        "--preset", "small", "--deterministic",
        "--set", "synth.n_subjects=5",
        "--set", "synth.duration_s=120",
        "--set", "synth.meal_min_s=20",
        "--set", "synth.meal_max_s=40",
        "--set", "pretrain.batch_size=16",
        "--set", "pretrain.epochs=1",
        "--set", "pretrain.schedule.total_epochs=1",
        "--set", "pretrain.max_batches_per_epoch=1",
        "--set", "head.epochs=2",
        "--set", "supervised_epochs=1",
    ];
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for d in &dirs {
        for cmd in CHAIN.iter().chain(&["sweep", "postprocess"]) {
            chewssl(d.path(), &[cmd], &tiny)?;
        }
    }
    let (a, b) = (files_under(dirs[0].path()), files_under(dirs[1].path()));
    check(a == b, "the two runs wrote different file sets")?;
    let compared: Vec<&PathBuf> = a
        .iter()
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("bin" | "json" | "csv")))
        .collect();
    let weights = compared.iter().filter(|p| p.extension().is_some_and(|e| e == "bin")).count();
    check(weights > 0, "no weight files written")?;
    for rel in &compared {
        let x = std::fs::read(dirs[0].path().join(rel)).map_err(|e| e.to_string())?;
        let y = std::fs::read(dirs[1].path().join(rel)).map_err(|e| e.to_string())?;
        check(x == y, format!("{} differs between runs", rel.display()))?;
    }
    Ok(format!("{} files ({weights} weight files) bit-identical across two runs", compared.len()))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient fidelity", gradient_fidelity),
        ("NT-Xent oracle", ntxent_oracle),
        ("architecture", architecture),
        ("schedule and optimizers", schedule_and_optimizers),
        ("post-processing oracle", postprocess_oracle),
        ("DSP", dsp),
        ("synthetic end-to-end", smoke),
        ("overfit sanity", overfit),
        ("determinism", determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let line = match &outcome {
            Ok(detail) => format!("criterion {id} ({name}): PASS: {detail}\n"),
            Err(why) => format!("criterion {id} ({name}): FAIL: {why}\n"),
        };
        // written past the test harness capture so the lines always show
        std::io::stdout().write_all(line.as_bytes()).unwrap();
        if outcome.is_err() {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
