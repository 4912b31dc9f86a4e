//! One function per subcommand. Each reads its inputs from the output
//! directory, writes its artifacts plus a resolved-config snapshot, and never
//! touches its inputs.

use std::fs;
use std::path::{Path, PathBuf};

use chewing_ssl::dataset::{
    load_manifest, load_recording, make_holdout_split, random_meal_spans, save_annotations, save_manifest, save_wav,
    synthesize_recording, ManifestEntry, Recording, SubjectSplit, SynthParams, WavEncoding,
};
use chewing_ssl::metrics::{format_table, MetricsReport};
use chewing_ssl::model::{build_h, compose, load_weights, save_weights, ModelGraph, ModelSummary, WINDOW_LEN};
use chewing_ssl::objective::Temperature;
use chewing_ssl::postprocess::{load_scores, pipeline, save_intervals, save_meals, save_scores, PredictionTrack};
use chewing_ssl::signal::PIPELINE_RATE_HZ;
use chewing_ssl::train::{
    evaluate, predict, pretrain, run_loso_sweep, train_head, train_supervised, windows_of, HeadKind, HoldoutData,
    HoldoutRow, PretrainCache, PretrainConfig, PretrainOutput, SweepRow, UnlabeledWindows, Variant,
    SUPERVISED_LABEL,
};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::layout::{variant_tag, Layout};
use crate::{require, CliError, CliResult};

pub const SNAPSHOT: &str = "config.resolved.json";

fn window_s() -> f64 {
    WINDOW_LEN as f64 / PIPELINE_RATE_HZ
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_text(text: &str, path: &Path) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Creates a stage directory and stores the resolved config in it.
fn stage(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    create_dir(dir)?;
    write_json(cfg, &dir.join(SNAPSHOT))
}

fn layout(cfg: &RunConfig) -> Layout {
    Layout::new(cfg.output_dir())
}

pub fn cmd_synth(cfg: &RunConfig) -> CliResult<PathBuf> {
    let out = layout(cfg);
    let dir = out.corpus();
    stage(&dir, cfg)?;
    let s = &cfg.synth;
    let mut entries = Vec::new();
    for k in 0..s.n_subjects {
        let subject_id = format!("S{:02}", k + 1);
        let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
        let params = SynthParams {
            subject_id: subject_id.clone(),
            duration_s: s.duration_s,
            sample_rate_hz: s.sample_rate_hz,
            meal_spans: random_meal_spans(s.duration_s, s.meals_per_subject, s.meal_min_s, s.meal_max_s, seed)?,
            seed,
            ..SynthParams::default()
        };
        let rec = synthesize_recording(&params)?;
        let entry = ManifestEntry {
            wav_path: PathBuf::from(format!("{subject_id}.wav")),
            annotation_path: PathBuf::from(format!("{subject_id}.csv")),
            subject_id,
        };
        save_wav(rec.audio(), dir.join(&entry.wav_path), WavEncoding::Float32)?;
        save_annotations(rec.chewing(), dir.join(&entry.annotation_path))?;
        info!("synthesized {}", entry.subject_id);
        entries.push(entry);
    }
    let manifest = out.corpus_manifest();
    save_manifest(&entries, &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCount {
    pub subject_id: String,
    pub windows: usize,
    pub positives: usize,
}

pub fn cmd_preprocess(cfg: &RunConfig) -> CliResult<PathBuf> {
    let out = layout(cfg);
    let manifest_path = match &cfg.paths.manifest {
        Some(p) if p.is_relative() => require(out.root().join(p), "synth")?,
        Some(p) => require(p.clone(), "synth")?,
        None => require(out.corpus_manifest(), "synth")?,
    };
    let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let entries = load_manifest(&manifest_path)?;
    let dir = out.preprocessed();
    stage(&dir, cfg)?;
    let mut processed = Vec::new();
    let mut counts = Vec::new();
    for entry in &entries {
        let rec = load_recording(entry, &base)?.preprocessed()?;
        let e = ManifestEntry {
            subject_id: entry.subject_id.clone(),
            wav_path: PathBuf::from(format!("{}.wav", entry.subject_id)),
            annotation_path: PathBuf::from(format!("{}.csv", entry.subject_id)),
        };
        save_wav(rec.audio(), dir.join(&e.wav_path), WavEncoding::Float32)?;
        save_annotations(rec.chewing(), dir.join(&e.annotation_path))?;
        let w = windows_of(std::slice::from_ref(&rec), std::slice::from_ref(&e.subject_id), &cfg.windowing)?;
        counts.push(WindowCount {
            subject_id: e.subject_id.clone(),
            windows: w.len(),
            positives: w.iter().filter(|w| w.label).count(),
        });
        info!("preprocessed {}", e.subject_id);
        processed.push(e);
    }
    save_manifest(&processed, out.preprocessed_manifest())?;
    let ids: Vec<String> = entries.iter().map(|e| e.subject_id.clone()).collect();
    write_json(&make_holdout_split(&ids, cfg.split.n_holdout, cfg.seed)?, &out.split())?;
    write_json(&counts, &dir.join("windows.json"))?;
    Ok(out.preprocessed_manifest())
}

/// Preprocessed recordings divided into (development, holdout).
fn load_split(out: &Layout) -> CliResult<(Vec<Recording>, Vec<Recording>)> {
    let manifest = require(out.preprocessed_manifest(), "preprocess")?;
    let split: SubjectSplit = read_json(&require(out.split(), "preprocess")?)?;
    let (mut dev, mut holdout) = (Vec::new(), Vec::new());
    for entry in load_manifest(&manifest)? {
        let rec = load_recording(&entry, &out.preprocessed())?;
        if split.holdout.contains(&entry.subject_id) {
            holdout.push(rec);
        } else if split.development.contains(&entry.subject_id) {
            dev.push(rec);
        }
    }
    Ok((dev, holdout))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub head_kind: HeadKind,
    pub tau: f64,
    pub loss: Vec<f64>,
}

fn load_pretrain(out: &Layout, kind: HeadKind, tau: Temperature) -> CliResult<PretrainOutput> {
    let dir = out.pretrain(kind, tau);
    let f = load_weights(require(dir.join("f.bin"), "pretrain")?)?;
    let g = load_weights(require(dir.join("g.bin"), "pretrain")?)?;
    let curve: LossCurve = read_json(&require(dir.join("loss.json"), "pretrain")?)?;
    Ok(PretrainOutput { f, g, loss_curve: curve.loss })
}

/// Pretrains every job of the config, or only `only` when given.
pub fn cmd_pretrain(cfg: &RunConfig, only: Option<(HeadKind, Temperature)>) -> CliResult<Vec<PathBuf>> {
    let out = layout(cfg);
    let (dev, _) = load_split(&out)?;
    let ids: Vec<String> = dev.iter().map(|r| r.subject_id().to_owned()).collect();
    let windows = UnlabeledWindows::from_labeled(&windows_of(&dev, &ids, &cfg.windowing)?)?;
    let jobs = match only {
        Some(job) => vec![job],
        None => cfg.pretrain_jobs(),
    };
    let mut dirs = Vec::new();
    for (kind, tau) in jobs {
        let pcfg = PretrainConfig { head_kind: kind, tau, ..cfg.pretrain.clone() };
        let result = pretrain(&windows, &pcfg)?;
        let dir = out.pretrain(kind, tau);
        stage(&dir, cfg)?;
        save_weights(&result.f, dir.join("f.bin"))?;
        save_weights(&result.g, dir.join("g.bin"))?;
        write_json(&LossCurve { head_kind: kind, tau: tau.get(), loss: result.loss_curve }, &dir.join("loss.json"))?;
        let names: Vec<String> = result.f.segments().iter().chain(result.g.segments()).map(|s| s.name.clone()).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let full = compose(vec![result.f, result.g], &names)?;
        write_json(&ModelSummary::of(&full), &dir.join("summary.json"))?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// What `train-head` records about each trained head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadFit {
    pub variant: Variant,
    pub tau: f64,
    pub selected_epoch: usize,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub validation_report: MetricsReport,
}

fn full_model(stack: ModelGraph<f32>, h: ModelGraph<f32>) -> CliResult<ModelGraph<f32>> {
    Ok(compose(vec![stack, h], &["h"])?)
}

pub fn cmd_train_head(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let out = layout(cfg);
    let (dev, holdout) = load_split(&out)?;
    let exp = cfg.experiment();
    let data = HoldoutData::new(&dev, &holdout, &exp)?;
    let mut dirs = Vec::new();
    for sel in &cfg.selections {
        let pre = load_pretrain(&out, sel.variant.head_kind(), sel.tau)?;
        let stack = sel.variant.stack(&pre)?;
        let fit = train_head(&stack, build_h::<f32>(cfg.head.seed), &data.train, &data.val, &cfg.head, true)?;
        let validation_report = evaluate(&full_model(stack, fit.model.clone())?, &data.val)?;
        let dir = out.head(sel.variant, sel.tau);
        stage(&dir, cfg)?;
        save_weights(&fit.model, dir.join("h.bin"))?;
        let record = HeadFit {
            variant: sel.variant,
            tau: sel.tau.get(),
            selected_epoch: fit.selected_epoch,
            train_losses: fit.train_losses,
            val_losses: fit.val_losses,
            validation_report,
        };
        write_json(&record, &dir.join("fit.json"))?;
        info!("trained head {} tau={}", sel.variant, sel.tau.get());
        dirs.push(dir);
    }
    Ok(dirs)
}

pub fn cmd_sweep(cfg: &RunConfig) -> CliResult<Vec<SweepRow>> {
    let out = layout(cfg);
    let (dev, _) = load_split(&out)?;
    let mut cache = PretrainCache::default();
    for &tau in &cfg.sweep.taus {
        for v in &cfg.sweep.variants {
            if cache.get(v.head_kind(), tau).is_none() {
                cache.insert(v.head_kind(), tau, load_pretrain(&out, v.head_kind(), tau)?);
            }
        }
    }
    let rows = run_loso_sweep(&dev, &cfg.sweep.taus, &cfg.sweep.variants, &cfg.experiment(), &mut cache)?;
    let dir = out.sweep();
    stage(&dir, cfg)?;
    write_json(&rows, &dir.join("report.json"))?;
    let table: Vec<(String, MetricsReport)> =
        rows.iter().map(|r| (format!("{} tau={}", r.variant, r.tau), r.report)).collect();
    write_text(&format_table(&table), &dir.join("report.txt"))?;
    Ok(rows)
}

fn save_subject_scores(model: &ModelGraph<f32>, data: &HoldoutData, tag: &str, dir: &Path) -> CliResult<()> {
    let scores = predict(model, &data.test.inputs)?;
    for subject in &data.test_subjects {
        let (starts, values): (Vec<f64>, Vec<f64>) = data
            .test_windows
            .iter()
            .zip(&scores)
            .filter(|(w, _)| &w.subject_id == subject)
            .map(|(w, s)| (w.start_s, *s))
            .unzip();
        let track = PredictionTrack::new(starts, values, window_s())?;
        save_scores(&track, dir.join(format!("{tag}_{subject}.csv")))?;
    }
    Ok(())
}

pub fn cmd_holdout(cfg: &RunConfig) -> CliResult<Vec<HoldoutRow>> {
    let out = layout(cfg);
    let (dev, holdout) = load_split(&out)?;
    let exp = cfg.experiment();
    let data = HoldoutData::new(&dev, &holdout, &exp)?;
    let dir = out.holdout();
    stage(&dir, cfg)?;
    let scores_dir = dir.join("scores");
    create_dir(&scores_dir)?;
    let mut rows = Vec::new();
    for sel in &cfg.selections {
        let head_dir = out.head(sel.variant, sel.tau);
        let h = load_weights(require(head_dir.join("h.bin"), "train-head")?)?;
        let fit: HeadFit = read_json(&require(head_dir.join("fit.json"), "train-head")?)?;
        let pre = load_pretrain(&out, sel.variant.head_kind(), sel.tau)?;
        let model = full_model(sel.variant.stack(&pre)?, h)?;
        save_subject_scores(&model, &data, &format!("{}_tau{}", variant_tag(sel.variant), sel.tau.get()), &scores_dir)?;
        rows.push(HoldoutRow {
            model: sel.variant.to_string(),
            variant: Some(sel.variant),
            tau: Some(sel.tau.get()),
            selected_epoch: fit.selected_epoch,
            val_losses: fit.val_losses,
            report: evaluate(&model, &data.test)?,
            test_subjects: data.test_subjects.clone(),
        });
    }
    let fit = train_supervised(&data.train, &data.val, &exp)?;
    save_weights(&fit.model, dir.join("supervised.bin"))?;
    save_subject_scores(&fit.model, &data, "supervised", &scores_dir)?;
    rows.push(HoldoutRow {
        model: SUPERVISED_LABEL.into(),
        variant: None,
        tau: None,
        selected_epoch: fit.selected_epoch,
        val_losses: fit.val_losses,
        report: evaluate(&fit.model, &data.test)?,
        test_subjects: data.test_subjects.clone(),
    });
    write_json(&rows, &dir.join("report.json"))?;
    let table: Vec<(String, MetricsReport)> = rows
        .iter()
        .map(|r| match r.tau {
            Some(t) => (format!("{} tau={t}", r.model), r.report),
            None => (r.model.clone(), r.report),
        })
        .collect();
    write_text(&format_table(&table), &dir.join("report.txt"))?;
    Ok(rows)
}

/// Runs the aggregation rules on score files; without explicit inputs, on
/// every score file written by `holdout`.
pub fn cmd_postprocess(cfg: &RunConfig, inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let out = layout(cfg);
    let inputs = if inputs.is_empty() {
        let dir = require(out.holdout().join("scores"), "holdout")?;
        let mut found: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| CliError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        found.sort();
        found
    } else {
        inputs.iter().map(|p| require(p.clone(), "holdout")).collect::<CliResult<_>>()?
    };
    let dir = out.postprocess();
    stage(&dir, cfg)?;
    let mut written = Vec::new();
    for path in inputs {
        let track = load_scores(&path, window_s())?;
        let result = pipeline(&track, &cfg.postprocess)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let bouts: Vec<_> = result.bouts.iter().map(|b| b.interval).collect();
        save_intervals(&result.chews, dir.join(format!("{stem}_chews.csv")))?;
        save_intervals(&bouts, dir.join(format!("{stem}_bouts.csv")))?;
        let meals = dir.join(format!("{stem}_meals.csv"));
        save_meals(&result.meals, &meals)?;
        written.push(meals);
    }
    Ok(written)
}
