//! Run configuration: presets, file merging, `--set` overrides and validation.

use std::path::{Path, PathBuf};

use chewing_ssl::augment::AugmentConfig;
use chewing_ssl::objective::Temperature;
use chewing_ssl::optim::{AdamConfig, LarsConfig, ScheduleConfig};
use chewing_ssl::postprocess::PostprocessConfig;
use chewing_ssl::train::{
    ExperimentConfig, HeadKind, HeadTrainConfig, PretrainConfig, Selection, Variant, WindowingConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Environment variable that relative output directories resolve against.
pub const OUTPUT_ROOT_ENV: &str = "CHEWSSL_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub output_dir: PathBuf,
    /// Recording manifest; `None` means the corpus written by `synth`.
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSettings {
    pub n_subjects: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub meals_per_subject: usize,
    pub meal_min_s: f64,
    pub meal_max_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSettings {
    pub n_holdout: usize,
    pub n_validation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    pub taus: Vec<Temperature>,
    pub variants: Vec<Variant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Drives every random stream; nested `seed` fields are overwritten with it.
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthSettings,
    pub split: SplitSettings,
    pub windowing: WindowingConfig,
    pub pretrain: PretrainConfig,
    pub head: HeadTrainConfig,
    pub supervised_epochs: Option<usize>,
    pub sweep: SweepSettings,
    pub selections: Vec<Selection>,
    pub postprocess: PostprocessConfig,
}

fn tau(v: f64) -> Temperature {
    Temperature::new(v).expect("preset temperatures are positive")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Full-scale settings of the original experiments.
    Full,
    /// Reduced epochs and batch size for quick synthetic runs.
    Small,
}

impl Preset {
    pub fn config(self) -> RunConfig {
        let full = RunConfig {
            seed: 0,
            paths: Paths { output_dir: PathBuf::from("runs"), manifest: None },
            synth: SynthSettings {
                n_subjects: 14,
                duration_s: 600.0,
                sample_rate_hz: 8000.0,
                meals_per_subject: 2,
                meal_min_s: 90.0,
                meal_max_s: 180.0,
            },
            split: SplitSettings { n_holdout: 4, n_validation: 2 },
            windowing: WindowingConfig::default(),
            pretrain: PretrainConfig {
                batch_size: 256,
                epochs: 100,
                tau: tau(0.5),
                head_kind: HeadKind::Linear,
                augment: AugmentConfig::default(),
                lars: LarsConfig::default(),
                schedule: ScheduleConfig { total_epochs: 100, ..ScheduleConfig::default() },
                seed: 0,
                max_batches_per_epoch: None,
            },
            head: HeadTrainConfig { batch_size: 64, epochs: 100, adam: AdamConfig::default(), seed: 0 },
            supervised_epochs: None,
            sweep: SweepSettings {
                taus: [0.1, 0.5, 1.0, 5.0, 10.0, 50.0, 100.0].into_iter().map(tau).collect(),
                variants: Variant::ALL.to_vec(),
            },
            selections: vec![
                Selection { variant: Variant::Linear, tau: tau(0.5) },
                Selection { variant: Variant::Nonlinear, tau: tau(0.1) },
                Selection { variant: Variant::NonlinearRetained, tau: tau(1.0) },
            ],
            postprocess: PostprocessConfig::default(),
        };
        match self {
            Preset::Full => full,
            Preset::Small => RunConfig {
                synth: SynthSettings { n_subjects: 6, ..full.synth },
                split: SplitSettings { n_holdout: 2, n_validation: 1 },
                pretrain: PretrainConfig {
                    batch_size: 64,
                    epochs: 20,
                    schedule: ScheduleConfig { total_epochs: 20, ..full.pretrain.schedule },
                    max_batches_per_epoch: Some(3),
                    ..full.pretrain
                },
                head: HeadTrainConfig { epochs: 30, ..full.head },
                supervised_epochs: Some(10),
                sweep: SweepSettings { taus: vec![tau(0.5)], variants: Variant::ALL.to_vec() },
                selections: Variant::ALL.iter().map(|&variant| Selection { variant, tau: tau(0.5) }).collect(),
                ..full
            },
        }
    }
}

/// Recursively overlays `patch` onto `base`; objects merge, everything else replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies one `dotted.key=value` override. The value is parsed as JSON and
/// falls back to a plain string.
pub fn apply_override(config: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{assignment}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut slot = config;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| CliError::config(format!("unknown config key `{key}`")))?;
    }
    *slot = value;
    Ok(())
}

impl RunConfig {
    /// Preset, then the optional config file, then `--set` overrides, then validation.
    pub fn resolve(preset: Preset, file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut value = serde_json::to_value(preset.config()).expect("presets serialize");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
            let patch: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            merge(&mut value, patch);
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::config(e.to_string()))?;
        cfg.pretrain.seed = cfg.seed;
        cfg.pretrain.augment.seed = cfg.seed;
        cfg.head.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(CliError::config(msg.to_owned())) };
        self.pretrain.validate()?;
        self.head.validate()?;
        self.postprocess.validate()?;
        check(self.synth.n_subjects > 0, "synth.n_subjects must be positive")?;
        check(self.synth.duration_s > 0.0, "synth.duration_s must be positive")?;
        check(self.split.n_holdout < self.synth.n_subjects, "split.n_holdout must leave development subjects")?;
        check(self.split.n_validation > 0, "split.n_validation must be positive")?;
        check(self.windowing.train_stride > 0, "windowing.train_stride must be positive")?;
        check(!self.sweep.taus.is_empty() && !self.sweep.variants.is_empty(), "sweep needs taus and variants")?;
        check(!self.selections.is_empty(), "selections must not be empty")?;
        check(self.supervised_epochs != Some(0), "supervised_epochs must be positive")?;
        Ok(())
    }

    /// Output directory, resolved against the output-root variable when relative.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.paths.output_dir.is_relative() => PathBuf::from(root).join(&self.paths.output_dir),
            _ => self.paths.output_dir.clone(),
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            pretrain: self.pretrain.clone(),
            head: self.head.clone(),
            supervised_epochs: self.supervised_epochs,
            windowing: self.windowing,
            n_validation: self.split.n_validation,
            split_seed: self.seed,
        }
    }

    /// Every (projection kind, temperature) needed by the sweep and the selections.
    pub fn pretrain_jobs(&self) -> Vec<(HeadKind, Temperature)> {
        let mut jobs: Vec<(HeadKind, Temperature)> = Vec::new();
        let sweep = self.sweep.taus.iter().flat_map(|&t| self.sweep.variants.iter().map(move |v| (v.head_kind(), t)));
        let chosen = self.selections.iter().map(|s| (s.variant.head_kind(), s.tau));
        for job in sweep.chain(chosen) {
            if !jobs.contains(&job) {
                jobs.push(job);
            }
        }
        jobs
    }
}
