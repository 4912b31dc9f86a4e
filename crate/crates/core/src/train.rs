//! Contrastive pretraining, classifier training and the evaluation harnesses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{double_batch, AugmentConfig};
use crate::dataset::{label_windows, make_loso_folds, LabeledWindow, Recording};
use crate::error::{ensure, Error, Result};
use crate::metrics::{confusion, report, Confusion, MetricsReport};
use crate::model::{
    build_f, build_g_linear, build_g_nonlinear, build_h, compose, split_g_nonlinear, GradSet, ModelGraph, Trace,
    WINDOW_LEN,
};
use crate::nn::{Scalar, Tensor};
use crate::objective::{bce, bce_grad, ntxent_batch_with_grad, EmbeddingBatch, Temperature};
use crate::optim::{lr_at_epoch, Adam, AdamConfig, Lars, LarsConfig, ScheduleConfig};

/// Samples whose gradients are summed sequentially before partial sums are combined in order.
const GRAD_CHUNK: usize = 8;
/// Largest doubled batch whose forward traces are kept between the loss and the backward pass.
const TRACE_CACHE_ROWS: usize = 128;

/// Windows without labels; the only input [`pretrain`] accepts.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledWindows(Vec<Vec<f32>>);

impl UnlabeledWindows {
    pub fn new(windows: Vec<Vec<f32>>) -> Result<Self> {
        ensure!(
            windows.iter().all(|w| w.len() == WINDOW_LEN),
            Shape,
            "every window must have {WINDOW_LEN} samples"
        );
        Ok(Self(windows))
    }

    pub fn from_labeled(windows: &[LabeledWindow]) -> Result<Self> {
        Self::new(windows.iter().map(|w| w.window.clone()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub tau: Temperature,
    pub head_kind: HeadKind,
    pub augment: AugmentConfig,
    pub lars: LarsConfig,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    /// Stop each epoch after this many batches of the shuffled order.
    #[serde(default)]
    pub max_batches_per_epoch: Option<usize>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 100,
            tau: Temperature::new(0.5).expect("positive"),
            head_kind: HeadKind::Linear,
            augment: AugmentConfig::default(),
            lars: LarsConfig::default(),
            schedule: ScheduleConfig::default(),
            seed: 0,
            max_batches_per_epoch: None,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 2, InvalidArgument, "pretraining batch size must be at least 2");
        ensure!(self.epochs > 0, InvalidArgument, "pretraining needs at least one epoch");
        ensure!(
            self.schedule.total_epochs == self.epochs,
            InvalidArgument,
            "schedule.total_epochs ({}) must equal epochs ({})",
            self.schedule.total_epochs,
            self.epochs
        );
        ensure!(self.max_batches_per_epoch != Some(0), InvalidArgument, "max_batches_per_epoch must be positive");
        self.augment.validate()?;
        self.lars.validate()?;
        self.schedule.validate()
    }
}

/// Feature extractor and projection head after contrastive training.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutput {
    pub f: ModelGraph<f32>,
    pub g: ModelGraph<f32>,
    /// Mean batch loss per epoch.
    pub loss_curve: Vec<f64>,
}

fn window_tensor(w: &[f32]) -> Result<Tensor<f32>> {
    Tensor::from_vec(&[1, w.len()], w.to_vec())
}

fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Sums per-sample gradients in fixed-size chunks, then adds the chunk sums
/// in index order, so the result does not depend on the worker count.
fn accumulate<T: Scalar>(
    model: &ModelGraph<T>,
    n: usize,
    job: impl Fn(usize, &mut GradSet<T>) -> Result<()> + Sync,
) -> Result<GradSet<T>> {
    let idx: Vec<usize> = (0..n).collect();
    let partials = idx
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = GradSet::zeros_for(model);
            for &i in chunk {
                job(i, &mut g)?;
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut parts = partials.into_iter();
    let mut total = parts.next().unwrap_or_else(|| GradSet::zeros_for(model));
    for p in parts {
        total.add_assign(&p)?;
    }
    Ok(total)
}

fn contrastive_step(
    model: &mut ModelGraph<f32>,
    views: &[Vec<f32>],
    tau: Temperature,
    opt: &mut Lars<f32>,
    lr: f64,
) -> Result<f64> {
    let inputs = views.iter().map(|v| window_tensor(v)).collect::<Result<Vec<_>>>()?;
    let keep = inputs.len() <= TRACE_CACHE_ROWS;
    let net = &*model;
    let outs: Vec<(Tensor<f32>, Option<Trace<f32>>)> = inputs
        .par_iter()
        .map(|x| {
            if keep {
                net.forward_trace(x).map(|(y, t)| (y, Some(t)))
            } else {
                net.forward(x).map(|y| (y, None))
            }
        })
        .collect::<Result<_>>()?;
    let dim = outs[0].0.len();
    let flat = outs.iter().flat_map(|(y, _)| y.data().iter().map(|&v| v as f64)).collect();
    let emb = EmbeddingBatch::from_flat(flat, dim)?;
    let (loss, grad) = ntxent_batch_with_grad(&emb, tau);
    ensure!(loss.is_finite(), Numeric, "contrastive loss is not finite");
    let grads = accumulate(net, inputs.len(), |i, g| {
        let up = Tensor::from_vec(&[dim], grad[i * dim..(i + 1) * dim].iter().map(|&v| v as f32).collect())?;
        match &outs[i].1 {
            Some(trace) => net.backward(trace, up, g, false)?,
            None => {
                let (_, trace) = net.forward_trace(&inputs[i])?;
                net.backward(&trace, up, g, false)?
            }
        };
        Ok(())
    })?;
    opt.step(model, &grads, lr)?;
    Ok(loss)
}

/// Trains `g ∘ f` on doubled, augmented batches with the contrastive loss and LARS.
pub fn pretrain(windows: &UnlabeledWindows, cfg: &PretrainConfig) -> Result<PretrainOutput> {
    cfg.validate()?;
    ensure!(
        windows.len() >= cfg.batch_size,
        InvalidArgument,
        "pretraining needs at least one batch of {} windows, got {}",
        cfg.batch_size,
        windows.len()
    );
    let g = match cfg.head_kind {
        HeadKind::Linear => build_g_linear::<f32>(cfg.seed),
        HeadKind::Nonlinear => build_g_nonlinear::<f32>(cfg.seed),
    };
    let g_name = g.segments()[0].name.clone();
    let mut model = compose(vec![build_f::<f32>(cfg.seed), g], &["f", &g_name])?;
    let mut opt = Lars::new(cfg.lars.clone(), &model)?;
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = lr_at_epoch(epoch, &cfg.schedule);
        let order = epoch_order(windows.len(), cfg.seed, epoch as u64);
        let mut losses = Vec::new();
        let limit = cfg.max_batches_per_epoch.unwrap_or(usize::MAX);
        for batch in order.chunks_exact(cfg.batch_size).take(limit) {
            let refs: Vec<&[f32]> = batch.iter().map(|&i| windows.0[i].as_slice()).collect();
            let idx: Vec<u64> = batch.iter().map(|&i| i as u64).collect();
            let views = double_batch(&refs, &idx, epoch as u64, &cfg.augment)?;
            losses.push(contrastive_step(&mut model, &views.samples, cfg.tau, &mut opt, lr)?);
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        info!("pretrain {:?} tau={} epoch {epoch}/{}: lr={lr:.4} loss={mean:.4}", cfg.head_kind, cfg.tau.get(), cfg.epochs);
        loss_curve.push(mean);
    }
    let mut segments = model.into_segments().into_iter();
    let f = ModelGraph::new(vec![segments.next().expect("f")])?;
    let g = ModelGraph::new(vec![segments.next().expect("g")])?;
    Ok(PretrainOutput { f, g, loss_curve })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadTrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        Self { batch_size: 64, epochs: 100, adam: AdamConfig::default(), seed: 0 }
    }
}

impl HeadTrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size > 0, InvalidArgument, "head batch size must be positive");
        ensure!(self.epochs > 0, InvalidArgument, "head training needs at least one epoch");
        self.adam.validate()
    }
}

/// Inputs with binary targets, already shaped for the model being trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervised {
    pub inputs: Vec<Tensor<f32>>,
    pub labels: Vec<bool>,
}

impl Supervised {
    pub fn new(inputs: Vec<Tensor<f32>>, labels: Vec<bool>) -> Result<Self> {
        ensure!(inputs.len() == labels.len(), Shape, "{} inputs for {} labels", inputs.len(), labels.len());
        Ok(Self { inputs, labels })
    }

    pub fn from_windows(windows: &[LabeledWindow]) -> Result<Self> {
        let inputs = windows.iter().map(|w| window_tensor(&w.window)).collect::<Result<_>>()?;
        Self::new(inputs, windows.iter().map(|w| w.label).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Outcome of [`fit`]: the snapshot with the lowest validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: ModelGraph<f32>,
    /// 1-based epoch of the returned snapshot.
    pub selected_epoch: usize,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
}

fn label_value(y: bool) -> f64 {
    if y {
        1.0
    } else {
        0.0
    }
}

/// Model outputs (probabilities) for every input.
pub fn predict(model: &ModelGraph<f32>, inputs: &[Tensor<f32>]) -> Result<Vec<f64>> {
    inputs.par_iter().map(|x| Ok(model.forward(x)?.data()[0] as f64)).collect()
}

/// Mean binary cross-entropy of a model on a labelled set.
pub fn mean_bce(model: &ModelGraph<f32>, data: &Supervised) -> Result<f64> {
    ensure!(!data.is_empty(), InvalidArgument, "cannot compute a loss on an empty set");
    let scores = predict(model, &data.inputs)?;
    let mut total = 0.0;
    for (p, &y) in scores.iter().zip(&data.labels) {
        total += bce(*p, label_value(y))?;
    }
    Ok(total / data.len() as f64)
}

/// Adam/BCE training of the trainable segments of `model`, keeping the
/// snapshot with minimal validation loss.
pub fn fit(mut model: ModelGraph<f32>, train: &Supervised, val: &Supervised, cfg: &HeadTrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    ensure!(!train.is_empty(), InvalidArgument, "training set is empty");
    ensure!(!val.is_empty(), InvalidArgument, "validation set is empty");
    let mut opt = Adam::new(cfg.adam, &model)?;
    let mut best: Option<(f64, usize, ModelGraph<f32>)> = None;
    let (mut train_losses, mut val_losses) = (Vec::new(), Vec::new());
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch as u64);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let net = &model;
            let results: Vec<(f64, Tensor<f32>, Trace<f32>)> = batch
                .par_iter()
                .map(|&i| {
                    let (y, trace) = net.forward_trace(&train.inputs[i])?;
                    Ok((y.data()[0] as f64, y, trace))
                })
                .collect::<Result<_>>()?;
            let mut uplinks = Vec::with_capacity(batch.len());
            for ((p, y, _), &i) in results.iter().zip(batch) {
                let target = label_value(train.labels[i]);
                epoch_loss += bce(*p, target)?;
                uplinks.push(Tensor::filled(y.shape(), (bce_grad(*p, target)? * scale) as f32));
            }
            let grads = accumulate(net, batch.len(), |k, g| {
                net.backward(&results[k].2, uplinks[k].clone(), g, false)?;
                Ok(())
            })?;
            opt.step(&mut model, &grads)?;
        }
        train_losses.push(epoch_loss / train.len() as f64);
        let v = mean_bce(&model, val)?;
        ensure!(v.is_finite(), Numeric, "validation loss is not finite at epoch {epoch}");
        val_losses.push(v);
        if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
            best = Some((v, epoch, model.clone()));
        }
    }
    let (_, selected_epoch, model) = best.expect("at least one epoch");
    Ok(FitResult { model, selected_epoch, train_losses, val_losses })
}

/// Runs a frozen stack over every input once.
pub fn cache_features(stack: &ModelGraph<f32>, inputs: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
    inputs.par_iter().map(|x| stack.forward(x)).collect()
}

/// Trains a classifier head on features of a frozen stack. With `cache`
/// the stack runs once per window, otherwise inside every step.
pub fn train_head(
    stack: &ModelGraph<f32>,
    h: ModelGraph<f32>,
    train: &Supervised,
    val: &Supervised,
    cfg: &HeadTrainConfig,
    cache: bool,
) -> Result<FitResult> {
    ensure!(!val.is_empty(), InvalidArgument, "validation set is empty");
    let h_names: Vec<String> = h.segments().iter().map(|s| s.name.clone()).collect();
    if cache {
        let train_f = Supervised::new(cache_features(stack, &train.inputs)?, train.labels.clone())?;
        let val_f = Supervised::new(cache_features(stack, &val.inputs)?, val.labels.clone())?;
        fit(h, &train_f, &val_f, cfg)
    } else {
        let names: Vec<&str> = h_names.iter().map(String::as_str).collect();
        let composed = compose(vec![stack.clone(), h], &names)?;
        let mut out = fit(composed, train, val, cfg)?;
        let stack_len = stack.segments().len();
        let head = out.model.into_segments().split_off(stack_len);
        out.model = ModelGraph::new(head)?;
        Ok(out)
    }
}

/// The three self-supervised classifier configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `h ∘ f^L`
    Linear,
    /// `h ∘ f^NL`
    Nonlinear,
    /// `h ∘ g^NL_1 ∘ f^NL`
    NonlinearRetained,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Linear, Variant::Nonlinear, Variant::NonlinearRetained];

    pub fn head_kind(self) -> HeadKind {
        match self {
            Variant::Linear => HeadKind::Linear,
            Variant::Nonlinear | Variant::NonlinearRetained => HeadKind::Nonlinear,
        }
    }

    /// Frozen feature stack built from the matching pretraining output.
    pub fn stack(self, pre: &PretrainOutput) -> Result<ModelGraph<f32>> {
        let f = pre.f.clone();
        let mut stack = match self {
            Variant::Linear | Variant::Nonlinear => f,
            Variant::NonlinearRetained => {
                let (g1, _) = split_g_nonlinear(&pre.g)?;
                let first = f.segments()[0].name.clone();
                compose(vec![f, g1], &[&first])?
            }
        };
        for s in stack.segments_mut() {
            s.trainable = false;
        }
        Ok(stack)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Linear => "h∘f^L",
            Variant::Nonlinear => "h∘f^NL",
            Variant::NonlinearRetained => "h∘g^NL_1∘f^NL",
        })
    }
}

/// Windowing used when turning recordings into labelled examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowingConfig {
    pub train_stride: usize,
    pub coverage_threshold: f64,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        Self { train_stride: WINDOW_LEN, coverage_threshold: 0.5 }
    }
}

/// Everything the evaluation harnesses need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pretrain: PretrainConfig,
    pub head: HeadTrainConfig,
    /// Epoch budget of the fully supervised baseline; `None` uses `head.epochs`.
    pub supervised_epochs: Option<usize>,
    pub windowing: WindowingConfig,
    pub n_validation: usize,
    pub split_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pretrain: PretrainConfig::default(),
            head: HeadTrainConfig::default(),
            supervised_epochs: None,
            windowing: WindowingConfig::default(),
            n_validation: 2,
            split_seed: 0,
        }
    }
}

/// Labelled windows of the named subjects, in recording order.
pub fn windows_of(recordings: &[Recording], subjects: &[String], w: &WindowingConfig) -> Result<Vec<LabeledWindow>> {
    let mut out = Vec::new();
    for rec in recordings.iter().filter(|r| subjects.iter().any(|s| s == r.subject_id())) {
        out.extend(label_windows(rec, WINDOW_LEN, w.train_stride, w.coverage_threshold)?);
    }
    Ok(out)
}

fn subject_ids(recordings: &[Recording]) -> Result<Vec<String>> {
    let ids: BTreeSet<String> = recordings.iter().map(|r| r.subject_id().to_owned()).collect();
    ensure!(ids.len() == recordings.len(), InvalidArgument, "recordings must belong to distinct subjects");
    Ok(ids.into_iter().collect())
}

/// Pretraining results keyed by projection kind and temperature.
#[derive(Debug, Default)]
pub struct PretrainCache {
    entries: BTreeMap<(HeadKind, u64), PretrainOutput>,
}

impl PretrainCache {
    pub fn insert(&mut self, kind: HeadKind, tau: Temperature, out: PretrainOutput) {
        self.entries.insert((kind, tau.get().to_bits()), out);
    }

    pub fn get(&self, kind: HeadKind, tau: Temperature) -> Option<&PretrainOutput> {
        self.entries.get(&(kind, tau.get().to_bits()))
    }

    /// Returns the cached run or pretrains on `windows` and caches it.
    pub fn get_or_train(
        &mut self,
        kind: HeadKind,
        tau: Temperature,
        windows: &UnlabeledWindows,
        base: &PretrainConfig,
    ) -> Result<&PretrainOutput> {
        let key = (kind, tau.get().to_bits());
        if !self.entries.contains_key(&key) {
            let cfg = PretrainConfig { tau, head_kind: kind, ..base.clone() };
            let out = pretrain(windows, &cfg)?;
            self.entries.insert(key, out);
        }
        Ok(&self.entries[&key])
    }
}

fn score(model: &ModelGraph<f32>, test: &Supervised, threshold: f64) -> Result<Confusion> {
    let preds: Vec<bool> = predict(model, &test.inputs)?.into_iter().map(|p| p >= threshold).collect();
    confusion(&preds, &test.labels)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub test_subject: String,
    pub selected_epoch: usize,
    pub val_losses: Vec<f64>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub variant: Variant,
    pub tau: f64,
    /// Metrics of the confusion pooled over all folds.
    pub report: MetricsReport,
    pub folds: Vec<FoldResult>,
}

/// Temperature x variant sweep with leave-one-subject-out head training.
/// Pretraining uses every development subject, once per (projection kind, tau).
pub fn run_loso_sweep(
    dev: &[Recording],
    taus: &[Temperature],
    variants: &[Variant],
    cfg: &ExperimentConfig,
    cache: &mut PretrainCache,
) -> Result<Vec<SweepRow>> {
    ensure!(!taus.is_empty() && !variants.is_empty(), InvalidArgument, "sweep needs temperatures and variants");
    let ids = subject_ids(dev)?;
    let folds = make_loso_folds(&ids, cfg.n_validation, cfg.split_seed)?;
    let all = windows_of(dev, &ids, &cfg.windowing)?;
    let unlabeled = UnlabeledWindows::from_labeled(&all)?;
    let mut rows = Vec::new();
    for &tau in taus {
        for &variant in variants {
            let pre = cache.get_or_train(variant.head_kind(), tau, &unlabeled, &cfg.pretrain)?;
            let stack = variant.stack(pre)?;
            let mut pooled = Confusion::default();
            let mut fold_results = Vec::new();
            for fold in &folds {
                let train = Supervised::from_windows(&windows_of(dev, &fold.train, &cfg.windowing)?)?;
                let val = Supervised::from_windows(&windows_of(dev, &fold.validation, &cfg.windowing)?)?;
                let test = Supervised::from_windows(&windows_of(dev, std::slice::from_ref(&fold.test), &cfg.windowing)?)?;
                ensure!(!train.is_empty() && !test.is_empty(), InvalidArgument, "fold {} is degenerate", fold.test);
                let h = build_h::<f32>(cfg.head.seed);
                let fit = train_head(&stack, h, &train, &val, &cfg.head, true)?;
                let full = compose(vec![stack.clone(), fit.model], &["h"])?;
                let c = score(&full, &test, 0.5)?;
                pooled.add(&c);
                fold_results.push(FoldResult {
                    test_subject: fold.test.clone(),
                    selected_epoch: fit.selected_epoch,
                    val_losses: fit.val_losses,
                    report: report(&c)?,
                });
            }
            info!("sweep {variant} tau={}: pooled {:?}", tau.get(), pooled);
            rows.push(SweepRow { variant, tau: tau.get(), report: report(&pooled)?, folds: fold_results });
        }
    }
    Ok(rows)
}

/// A variant with the temperature chosen for it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selection {
    pub variant: Variant,
    pub tau: Temperature,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoldoutRow {
    pub model: String,
    pub variant: Option<Variant>,
    pub tau: Option<f64>,
    pub selected_epoch: usize,
    pub val_losses: Vec<f64>,
    pub report: MetricsReport,
    pub test_subjects: Vec<String>,
}

/// Trained classifiers of a holdout run, for persisting.
#[derive(Debug, Clone)]
pub struct HoldoutModels {
    pub heads: Vec<(Selection, ModelGraph<f32>)>,
    pub supervised: ModelGraph<f32>,
}

/// Development subjects used for training and validation in the holdout run.
pub fn holdout_dev_split(dev_ids: &[String], n_validation: usize, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    ensure!(
        n_validation > 0 && n_validation < dev_ids.len(),
        InvalidArgument,
        "need 0 < n_validation < {} development subjects, got {n_validation}",
        dev_ids.len()
    );
    let mut ids = dev_ids.to_vec();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let mut train = ids.split_off(n_validation);
    let mut val = ids;
    train.sort();
    val.sort();
    Ok((train, val))
}

/// Windows of a holdout run: development subjects split into training and
/// validation, held-out subjects for testing only.
#[derive(Debug, Clone)]
pub struct HoldoutData {
    pub train: Supervised,
    pub val: Supervised,
    pub test: Supervised,
    /// Held-out windows in the order of `test`, for per-window scores.
    pub test_windows: Vec<LabeledWindow>,
    pub test_subjects: Vec<String>,
    /// All development windows without labels, for pretraining.
    pub unlabeled: UnlabeledWindows,
}

impl HoldoutData {
    pub fn new(dev: &[Recording], holdout: &[Recording], cfg: &ExperimentConfig) -> Result<Self> {
        let dev_ids = subject_ids(dev)?;
        let test_ids = subject_ids(holdout)?;
        ensure!(!holdout.is_empty(), InvalidArgument, "holdout set is empty");
        if let Some(shared) = dev_ids.iter().find(|id| test_ids.contains(id)) {
            return Err(Error::InvalidArgument(format!("subject {shared} is in both development and holdout sets")));
        }
        let (train_ids, val_ids) = holdout_dev_split(&dev_ids, cfg.n_validation, cfg.split_seed)?;
        let test_windows = windows_of(holdout, &test_ids, &cfg.windowing)?;
        Ok(Self {
            train: Supervised::from_windows(&windows_of(dev, &train_ids, &cfg.windowing)?)?,
            val: Supervised::from_windows(&windows_of(dev, &val_ids, &cfg.windowing)?)?,
            test: Supervised::from_windows(&test_windows)?,
            test_windows,
            test_subjects: test_ids,
            unlabeled: UnlabeledWindows::from_labeled(&windows_of(dev, &dev_ids, &cfg.windowing)?)?,
        })
    }
}

/// Metrics of a full classifier at the 0.5 decision threshold.
pub fn evaluate(model: &ModelGraph<f32>, test: &Supervised) -> Result<MetricsReport> {
    report(&score(model, test, 0.5)?)
}

/// Fully supervised baseline: `h ∘ f` from scratch, every segment trainable.
pub fn train_supervised(train: &Supervised, val: &Supervised, cfg: &ExperimentConfig) -> Result<FitResult> {
    let sup_cfg = HeadTrainConfig { epochs: cfg.supervised_epochs.unwrap_or(cfg.head.epochs), ..cfg.head.clone() };
    let model = compose(vec![build_f::<f32>(cfg.head.seed), build_h::<f32>(cfg.head.seed)], &["f", "h"])?;
    fit(model, train, val, &sup_cfg)
}

/// Trains every selection plus the fully supervised baseline on the
/// development subjects and scores them on the holdout subjects.
pub fn run_holdout(
    dev: &[Recording],
    holdout: &[Recording],
    selections: &[Selection],
    cfg: &ExperimentConfig,
    cache: &mut PretrainCache,
) -> Result<(Vec<HoldoutRow>, HoldoutModels)> {
    let data = HoldoutData::new(dev, holdout, cfg)?;
    let mut rows = Vec::new();
    let mut heads = Vec::new();
    for sel in selections {
        let pre = cache.get_or_train(sel.variant.head_kind(), sel.tau, &data.unlabeled, &cfg.pretrain)?;
        let stack = sel.variant.stack(pre)?;
        let fit = train_head(&stack, build_h::<f32>(cfg.head.seed), &data.train, &data.val, &cfg.head, true)?;
        let full = compose(vec![stack, fit.model.clone()], &["h"])?;
        let r = evaluate(&full, &data.test)?;
        info!("holdout {} tau={}: F1 {:.3}", sel.variant, sel.tau.get(), r.f1);
        rows.push(HoldoutRow {
            model: sel.variant.to_string(),
            variant: Some(sel.variant),
            tau: Some(sel.tau.get()),
            selected_epoch: fit.selected_epoch,
            val_losses: fit.val_losses,
            report: r,
            test_subjects: data.test_subjects.clone(),
        });
        heads.push((*sel, fit.model));
    }
    let fit = train_supervised(&data.train, &data.val, cfg)?;
    let r = evaluate(&fit.model, &data.test)?;
    info!("holdout supervised: F1 {:.3}", r.f1);
    rows.push(HoldoutRow {
        model: SUPERVISED_LABEL.into(),
        variant: None,
        tau: None,
        selected_epoch: fit.selected_epoch,
        val_losses: fit.val_losses,
        report: r,
        test_subjects: data.test_subjects,
    });
    Ok((rows, HoldoutModels { heads, supervised: fit.model }))
}

/// Row label of the fully supervised baseline.
pub const SUPERVISED_LABEL: &str = "supervised h∘f";
