//! Recordings, annotations, window labels, subject splits and synthetic data.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::interval::{check_sorted_disjoint, Interval};
use crate::signal::{
    design_highpass_butterworth, extract_windows, filter_forward, preprocess, windowed_sinc_lowpass, TimeSeries,
};

/// Default fraction of a window that must be chewing for a positive label.
pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.5;

/// One subject's audio with its chewing annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    subject_id: String,
    audio: TimeSeries,
    chewing: Vec<Interval>,
}

impl Recording {
    pub fn new(subject_id: impl Into<String>, audio: TimeSeries, chewing: Vec<Interval>) -> Result<Self> {
        let subject_id = subject_id.into();
        ensure!(!subject_id.is_empty(), InvalidArgument, "subject id must not be empty");
        check_sorted_disjoint(&chewing)?;
        let duration = audio.duration_s();
        if let Some(last) = chewing.last() {
            ensure!(
                last.end_s <= duration + 1e-9,
                InvalidArgument,
                "annotation {last:?} extends past the recording end ({duration} s)"
            );
        }
        Ok(Self { subject_id, audio, chewing })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn audio(&self) -> &TimeSeries {
        &self.audio
    }

    pub fn chewing(&self) -> &[Interval] {
        &self.chewing
    }

    /// The recording resampled to the pipeline rate and high-passed.
    pub fn preprocessed(&self) -> Result<Recording> {
        Recording::new(self.subject_id.clone(), preprocess(&self.audio)?, self.chewing.clone())
    }

    /// Fraction of `[start_s, start_s + duration_s)` covered by chewing.
    pub fn coverage(&self, start_s: f64, duration_s: f64) -> f64 {
        let window = Interval { start_s, end_s: start_s + duration_s };
        self.chewing.iter().map(|c| c.overlap(&window)).sum::<f64>() / duration_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub window: Vec<f32>,
    pub label: bool,
    pub subject_id: String,
    pub start_s: f64,
}

/// Cuts windows and labels each one by its chewing coverage.
pub fn label_windows(
    rec: &Recording,
    window_len: usize,
    stride: usize,
    coverage_threshold: f64,
) -> Result<Vec<LabeledWindow>> {
    ensure!(
        coverage_threshold > 0.0 && coverage_threshold <= 1.0,
        InvalidArgument,
        "coverage threshold must be in (0, 1], got {coverage_threshold}"
    );
    let m = extract_windows(&rec.audio, window_len, stride)?;
    let duration = window_len as f64 / rec.audio.sample_rate_hz();
    Ok(m.windows
        .into_iter()
        .zip(m.origin_times_s)
        .map(|(window, start_s)| LabeledWindow {
            window,
            label: rec.coverage(start_s, duration) >= coverage_threshold,
            subject_id: rec.subject_id.clone(),
            start_s,
        })
        .collect())
}

/// Sample encoding used by [`save_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Reads a mono PCM16 or float32 WAV; PCM samples are divided by 32768.
pub fn load_wav(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format { path: path.to_path_buf(), message: other.to_string() },
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Multichannel { path: path.to_path_buf(), channels: spec.channels });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (format, bits) => {
            return Err(Error::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: format!("{bits}-bit {format:?}"),
            })
        }
    };
    TimeSeries::new(samples, spec.sample_rate as f64)
}

pub fn save_wav(x: &TimeSeries, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let rate = x.sample_rate_hz();
    ensure!(
        rate.fract() == 0.0 && rate >= 1.0 && rate <= u32::MAX as f64,
        InvalidArgument,
        "WAV needs an integer sample rate, got {rate}"
    );
    let (bits, format) = match encoding {
        WavEncoding::Pcm16 => (16, hound::SampleFormat::Int),
        WavEncoding::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec { channels: 1, sample_rate: rate as u32, bits_per_sample: bits, sample_format: format };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &v in x.samples() {
        match encoding {
            WavEncoding::Pcm16 => w.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?,
            WavEncoding::Float32 => w.write_sample(v as f32)?,
        }
    }
    w.finalize()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRow {
    start_s: f64,
    end_s: f64,
}

/// Reads a `start_s,end_s` CSV; rows may come in any order but must not overlap.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<Interval>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    ensure!(
        headers.iter().collect::<Vec<_>>() == ["start_s", "end_s"],
        InvalidArgument,
        "{}: expected header start_s,end_s, got {}",
        path.display(),
        headers.iter().collect::<Vec<_>>().join(",")
    );
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<AnnotationRow>().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Annotation { row: row_no, message: e.to_string() })?;
        let iv = Interval::new(row.start_s, row.end_s)
            .map_err(|e| Error::Annotation { row: row_no, message: e.to_string() })?;
        rows.push((row_no, iv));
    }
    rows.sort_by(|a, b| a.1.start_s.total_cmp(&b.1.start_s));
    for pair in rows.windows(2) {
        if pair[1].1.start_s < pair[0].1.end_s {
            return Err(Error::Annotation {
                row: pair[1].0,
                message: format!("overlaps row {} ({:?} vs {:?})", pair[0].0, pair[0].1, pair[1].1),
            });
        }
    }
    Ok(rows.into_iter().map(|(_, iv)| iv).collect())
}

pub fn save_annotations(intervals: &[Interval], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    if intervals.is_empty() {
        w.write_record(["start_s", "end_s"])?;
    }
    for iv in intervals {
        w.serialize(AnnotationRow { start_s: iv.start_s, end_s: iv.end_s })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub development: Vec<String>,
    pub holdout: Vec<String>,
}

fn sorted_unique(ids: &[String]) -> Result<Vec<String>> {
    let set: BTreeSet<&String> = ids.iter().collect();
    ensure!(set.len() == ids.len(), InvalidArgument, "subject ids must be unique");
    Ok(set.into_iter().cloned().collect())
}

/// Random development/holdout partition; both halves are returned sorted.
pub fn make_holdout_split(subject_ids: &[String], n_holdout: usize, seed: u64) -> Result<SubjectSplit> {
    ensure!(
        n_holdout < subject_ids.len(),
        InvalidArgument,
        "cannot hold out {n_holdout} of {} subjects",
        subject_ids.len()
    );
    let mut ids = sorted_unique(subject_ids)?;
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut holdout = ids.split_off(ids.len() - n_holdout);
    ids.sort();
    holdout.sort();
    Ok(SubjectSplit { development: ids, holdout })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test: String,
    pub validation: Vec<String>,
    pub train: Vec<String>,
}

/// One fold per subject; validation subjects are drawn from the rest by seed.
pub fn make_loso_folds(dev_subjects: &[String], n_validation: usize, seed: u64) -> Result<Vec<Fold>> {
    ensure!(
        dev_subjects.len() >= 2 && n_validation + 1 < dev_subjects.len(),
        InvalidArgument,
        "{} subjects cannot form folds with {n_validation} validation subjects",
        dev_subjects.len()
    );
    let ids = sorted_unique(dev_subjects)?;
    Ok(ids
        .iter()
        .enumerate()
        .map(|(k, test)| {
            let mut rest: Vec<String> = ids.iter().filter(|s| *s != test).cloned().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            rest.shuffle(&mut rng);
            let mut train = rest.split_off(n_validation);
            let mut validation = rest;
            validation.sort();
            train.sort();
            Fold { test: test.clone(), validation, train }
        })
        .collect())
}

/// Parameters of a synthetic recording: background noise plus trains of
/// decaying band-limited bursts inside each meal span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub subject_id: String,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub chew_rate_hz: f64,
    pub burst_band_hz: (f64, f64),
    pub burst_decay_s: f64,
    pub burst_amplitude: f64,
    pub meal_spans: Vec<Interval>,
    pub background_noise_std: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            subject_id: "synthetic".into(),
            duration_s: 600.0,
            sample_rate_hz: 8000.0,
            chew_rate_hz: 1.5,
            burst_band_hz: (20.0, 250.0),
            burst_decay_s: 0.05,
            burst_amplitude: 0.2,
            meal_spans: vec![Interval { start_s: 60.0, end_s: 210.0 }, Interval { start_s: 360.0, end_s: 480.0 }],
            background_noise_std: 0.01,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("duration_s", self.duration_s),
            ("sample_rate_hz", self.sample_rate_hz),
            ("chew_rate_hz", self.chew_rate_hz),
            ("burst_decay_s", self.burst_decay_s),
            ("burst_amplitude", self.burst_amplitude),
            ("background_noise_std", self.background_noise_std),
        ] {
            ensure!(v > 0.0 && v.is_finite(), InvalidArgument, "{name} must be positive, got {v}");
        }
        let (lo, hi) = self.burst_band_hz;
        ensure!(
            lo > 0.0 && lo < hi && hi < self.sample_rate_hz / 2.0,
            InvalidArgument,
            "burst band ({lo}, {hi}) Hz must lie inside (0, {}) Hz",
            self.sample_rate_hz / 2.0
        );
        for span in &self.meal_spans {
            Interval::new(span.start_s, span.end_s)?;
        }
        check_sorted_disjoint(&self.meal_spans)?;
        if let Some(last) = self.meal_spans.last() {
            ensure!(last.end_s <= self.duration_s, InvalidArgument, "meal span {last:?} exceeds the duration");
        }
        Ok(())
    }
}

/// `count` disjoint meal spans with durations in `[min_s, max_s]`, sorted.
pub fn random_meal_spans(duration_s: f64, count: usize, min_s: f64, max_s: f64, seed: u64) -> Result<Vec<Interval>> {
    ensure!(0.0 < min_s && min_s <= max_s, InvalidArgument, "meal length range [{min_s}, {max_s}] is invalid");
    ensure!(
        count as f64 * max_s < duration_s,
        InvalidArgument,
        "{count} meals of up to {max_s} s do not fit in {duration_s} s"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lengths: Vec<f64> = (0..count).map(|_| rng.random_range(min_s..=max_s).round()).collect();
    // spread the leftover time over count + 1 gaps
    let slack = duration_s - lengths.iter().sum::<f64>();
    let mut cuts: Vec<f64> = (0..count).map(|_| rng.random_range(0.0..slack)).collect();
    cuts.sort_by(f64::total_cmp);
    let mut spans = Vec::with_capacity(count);
    let mut used = 0.0;
    for (cut, len) in cuts.iter().zip(&lengths) {
        let start = (cut + used).floor();
        spans.push(Interval::new(start, start + len)?);
        used += len;
    }
    check_sorted_disjoint(&spans)?;
    Ok(spans)
}

/// Band-limited noise: windowed-sinc low-pass at the upper edge, Butterworth high-pass at the lower.
fn band_noise(len: usize, rate: f64, band: (f64, f64), rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let taps = windowed_sinc_lowpass(band.1 / rate, 2 * (2.0 * rate / band.1).ceil() as usize + 1)?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let raw: Vec<f64> = (0..len + taps.len()).map(|_| normal.sample(rng)).collect();
    let low: Vec<f64> = (0..len).map(|i| taps.iter().zip(&raw[i..]).map(|(h, x)| h * x).sum()).collect();
    let hp = design_highpass_butterworth(band.0, rate, 2)?;
    let out = filter_forward(&hp, &TimeSeries::new(low, rate)?)?.into_samples();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    Ok(if rms > 0.0 { out.into_iter().map(|v| v / rms).collect() } else { out })
}

pub fn synthesize_recording(params: &SynthParams) -> Result<Recording> {
    params.validate()?;
    let rate = params.sample_rate_hz;
    let n = (params.duration_s * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, params.background_noise_std).expect("positive std");
    let mut audio: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();

    let burst_len = ((5.0 * params.burst_decay_s * rate).ceil() as usize).max(1);
    let period = 1.0 / params.chew_rate_hz;
    for span in &params.meal_spans {
        let mut t = span.start_s + rng.random_range(0.0..period);
        while t < span.end_s {
            let start = (t * rate) as usize;
            let len = burst_len.min(((span.end_s * rate) as usize).saturating_sub(start));
            let gain = params.burst_amplitude * rng.random_range(0.7..1.3);
            let burst = band_noise(burst_len, rate, params.burst_band_hz, &mut rng)?;
            for (k, b) in burst.iter().take(len).enumerate() {
                let envelope = (-(k as f64) / (params.burst_decay_s * rate)).exp();
                audio[start + k] += gain * envelope * b;
            }
            t += period * rng.random_range(0.85..1.15);
        }
    }
    Recording::new(params.subject_id.clone(), TimeSeries::new(audio, rate)?, params.meal_spans.clone())
}

/// One line of a recording manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub wav_path: PathBuf,
    pub annotation_path: PathBuf,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text)
        .map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })?;
    let ids: Vec<String> = entries.iter().map(|e| e.subject_id.clone()).collect();
    sorted_unique(&ids)?;
    Ok(entries)
}

pub fn save_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serde_json::to_string_pretty(entries)?).map_err(|e| Error::io(path, e))
}

/// Loads one manifest entry; relative paths resolve against `base_dir`.
pub fn load_recording(entry: &ManifestEntry, base_dir: &Path) -> Result<Recording> {
    let audio = load_wav(base_dir.join(&entry.wav_path))?;
    let chewing = load_annotations(base_dir.join(&entry.annotation_path))?;
    Recording::new(entry.subject_id.clone(), audio, chewing)
}
