//! Aggregation of window predictions into chews, chewing bouts and meals.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::interval::Interval;

/// Thresholds of the aggregation rules. Gaps merge inclusively, minimums keep inclusively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostprocessConfig {
    pub score_threshold: f64,
    pub max_chew_gap_s: f64,
    pub min_bout_s: f64,
    pub max_bout_gap_s: f64,
    pub min_meal_ratio: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { score_threshold: 0.5, max_chew_gap_s: 2.0, min_bout_s: 5.0, max_bout_gap_s: 60.0, min_meal_ratio: 0.25 }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!((0.0..=1.0).contains(&self.score_threshold), InvalidArgument, "score_threshold must be in [0, 1]");
        for (name, v) in [
            ("max_chew_gap_s", self.max_chew_gap_s),
            ("min_bout_s", self.min_bout_s),
            ("max_bout_gap_s", self.max_bout_gap_s),
            ("min_meal_ratio", self.min_meal_ratio),
        ] {
            ensure!(v >= 0.0 && v.is_finite(), InvalidArgument, "{name} must be non-negative, got {v}");
        }
        Ok(())
    }
}

/// Window scores with their start times.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrack {
    starts_s: Vec<f64>,
    scores: Vec<f64>,
    window_s: f64,
}

impl PredictionTrack {
    pub fn new(starts_s: Vec<f64>, scores: Vec<f64>, window_s: f64) -> Result<Self> {
        ensure!(starts_s.len() == scores.len(), Shape, "{} start times for {} scores", starts_s.len(), scores.len());
        ensure!(window_s > 0.0 && window_s.is_finite(), InvalidArgument, "window duration must be positive");
        ensure!(
            scores.iter().all(|s| (0.0..=1.0).contains(s)),
            InvalidArgument,
            "scores must lie in [0, 1]"
        );
        ensure!(
            starts_s.iter().all(|t| t.is_finite() && *t >= 0.0),
            InvalidArgument,
            "start times must be finite and non-negative"
        );
        ensure!(starts_s.windows(2).all(|w| w[0] < w[1]), InvalidArgument, "start times must be increasing");
        Ok(Self { starts_s, scores, window_s })
    }

    pub fn starts_s(&self) -> &[f64] {
        &self.starts_s
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn window_s(&self) -> f64 {
        self.window_s
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `[first start, last start + window]`, or `None` for an empty track.
    pub fn span(&self) -> Option<Interval> {
        Some(Interval { start_s: *self.starts_s.first()?, end_s: self.starts_s.last()? + self.window_s })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bout {
    pub interval: Interval,
    pub chews: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Meal {
    pub interval: Interval,
    pub bouts: Vec<Interval>,
}

impl Meal {
    /// Total bout time over meal span.
    pub fn bout_ratio(&self) -> f64 {
        self.bouts.iter().map(Interval::duration).sum::<f64>() / self.interval.duration()
    }
}

/// Maximal runs of windows scoring at least `threshold`, each spanning from
/// the run's first start to its last start plus the window duration.
pub fn track_to_pulses(track: &PredictionTrack, threshold: f64) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut run: Option<(f64, f64)> = None;
    for (&t, &s) in track.starts_s.iter().zip(&track.scores) {
        if s >= threshold {
            let end = t + track.window_s;
            run = Some(run.map_or((t, end), |(start, _)| (start, end)));
        } else if let Some((start, end)) = run.take() {
            out.push(Interval { start_s: start, end_s: end });
        }
    }
    if let Some((start_s, end_s)) = run {
        out.push(Interval { start_s, end_s });
    }
    out
}

/// Groups intervals sorted by start whose end-to-start gap is at most `max_gap`.
fn merge_close(items: &[Interval], max_gap: f64) -> Result<Vec<(Interval, Vec<Interval>)>> {
    ensure!(
        items.windows(2).all(|w| w[0].start_s <= w[1].start_s),
        InvalidArgument,
        "intervals must be sorted by start"
    );
    let mut groups: Vec<(Interval, Vec<Interval>)> = Vec::new();
    for &iv in items {
        match groups.last_mut() {
            Some((span, members)) if iv.start_s - span.end_s <= max_gap => {
                span.end_s = span.end_s.max(iv.end_s);
                members.push(iv);
            }
            _ => groups.push((iv, vec![iv])),
        }
    }
    Ok(groups)
}

pub fn chews_to_bouts(chews: &[Interval], max_gap_s: f64) -> Result<Vec<Bout>> {
    Ok(merge_close(chews, max_gap_s)?.into_iter().map(|(interval, chews)| Bout { interval, chews }).collect())
}

pub fn drop_short_bouts(bouts: Vec<Bout>, min_duration_s: f64) -> Vec<Bout> {
    bouts.into_iter().filter(|b| b.interval.duration() >= min_duration_s).collect()
}

pub fn bouts_to_meals(bouts: &[Interval], max_gap_s: f64) -> Result<Vec<Meal>> {
    Ok(merge_close(bouts, max_gap_s)?.into_iter().map(|(interval, bouts)| Meal { interval, bouts }).collect())
}

pub fn filter_meals(meals: Vec<Meal>, min_ratio: f64) -> Vec<Meal> {
    meals.into_iter().filter(|m| m.bout_ratio() >= min_ratio).collect()
}

/// Every stage of the aggregation, for auditing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutput {
    pub chews: Vec<Interval>,
    pub bouts: Vec<Bout>,
    pub meals: Vec<Meal>,
}

pub fn pipeline(track: &PredictionTrack, cfg: &PostprocessConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let chews = track_to_pulses(track, cfg.score_threshold);
    let bouts = drop_short_bouts(chews_to_bouts(&chews, cfg.max_chew_gap_s)?, cfg.min_bout_s);
    let bout_spans: Vec<Interval> = bouts.iter().map(|b| b.interval).collect();
    let meals = filter_meals(bouts_to_meals(&bout_spans, cfg.max_bout_gap_s)?, cfg.min_meal_ratio);
    Ok(PipelineOutput { chews, bouts, meals })
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    window_start_s: f64,
    score: f64,
}

#[derive(Debug, Serialize)]
struct MealRow {
    start_s: f64,
    end_s: f64,
    ratio: f64,
}

/// Reads a `window_start_s,score` CSV.
pub fn load_scores(path: impl AsRef<Path>, window_s: f64) -> Result<PredictionTrack> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let (mut starts, mut scores) = (Vec::new(), Vec::new());
    for (i, row) in reader.deserialize::<ScoreRow>().enumerate() {
        let row = row.map_err(|e| Error::Format { path: path.to_path_buf(), message: format!("row {}: {e}", i + 1) })?;
        starts.push(row.window_start_s);
        scores.push(row.score);
    }
    PredictionTrack::new(starts, scores, window_s)
}

pub fn save_scores(track: &PredictionTrack, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    if track.is_empty() {
        w.write_record(["window_start_s", "score"])?;
    }
    for (&window_start_s, &score) in track.starts_s.iter().zip(&track.scores) {
        w.serialize(ScoreRow { window_start_s, score })?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn save_intervals(intervals: &[Interval], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["start_s", "end_s"])?;
    for iv in intervals {
        w.write_record([iv.start_s.to_string(), iv.end_s.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn save_meals(meals: &[Meal], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    if meals.is_empty() {
        w.write_record(["start_s", "end_s", "ratio"])?;
    }
    for m in meals {
        w.serialize(MealRow { start_s: m.interval.start_s, end_s: m.interval.end_s, ratio: m.bout_ratio() })?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(a: f64, b: f64) -> Interval {
        Interval::new(a, b).unwrap()
    }

    fn spans(bouts: &[Bout]) -> Vec<Interval> {
        bouts.iter().map(|b| b.interval).collect()
    }

    #[test]
    fn pulses_from_runs() {
        let track = PredictionTrack::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.9, 0.8, 0.1, 0.95], 1.0).unwrap();
        assert_eq!(track_to_pulses(&track, 0.5), vec![iv(0.0, 2.0), iv(3.0, 4.0)]);
        let low = PredictionTrack::new(vec![0.0, 1.0], vec![0.2, 0.49], 1.0).unwrap();
        assert!(track_to_pulses(&low, 0.5).is_empty());
        let high = PredictionTrack::new(vec![0.0, 1.0], vec![0.5, 1.0], 1.0).unwrap();
        assert_eq!(track_to_pulses(&high, 0.5), vec![iv(0.0, 2.0)]);
    }

    #[test]
    fn chew_gap_boundaries() {
        let merged = chews_to_bouts(&[iv(0.0, 0.5), iv(1.0, 1.5), iv(2.0, 6.0)], 2.0).unwrap();
        assert_eq!(spans(&merged), vec![iv(0.0, 6.0)]);
        assert_eq!(merged[0].chews.len(), 3);
        assert_eq!(spans(&chews_to_bouts(&[iv(0.0, 1.0), iv(3.1, 4.0)], 2.0).unwrap()).len(), 2);
        assert_eq!(spans(&chews_to_bouts(&[iv(0.0, 1.0), iv(3.0, 4.0)], 2.0).unwrap()), vec![iv(0.0, 4.0)]);
        assert!(chews_to_bouts(&[iv(3.0, 4.0), iv(0.0, 1.0)], 2.0).is_err());
    }

    #[test]
    fn short_bouts() {
        let bouts = chews_to_bouts(&[iv(0.0, 4.999), iv(10.0, 15.0)], 2.0).unwrap();
        assert_eq!(spans(&drop_short_bouts(bouts, 5.0)), vec![iv(10.0, 15.0)]);
        assert!(drop_short_bouts(Vec::new(), 5.0).is_empty());
    }

    #[test]
    fn meals_and_ratios() {
        let meals = bouts_to_meals(&[iv(0.0, 6.0), iv(30.0, 36.0)], 60.0).unwrap();
        assert_eq!(meals.len(), 1);
        assert_eq!(meals[0].interval, iv(0.0, 36.0));
        assert!((meals[0].bout_ratio() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(filter_meals(meals, 0.25).len(), 1);

        assert_eq!(bouts_to_meals(&[iv(0.0, 6.0), iv(70.0, 76.0)], 60.0).unwrap().len(), 2);
        let sparse = bouts_to_meals(&[iv(0.0, 5.0), iv(60.0, 65.0)], 60.0).unwrap();
        assert!(filter_meals(sparse, 0.25).is_empty());
        let single = bouts_to_meals(&[iv(3.0, 9.0)], 60.0).unwrap();
        assert_eq!(single[0].interval, iv(3.0, 9.0));
        assert_eq!(filter_meals(single, 0.25).len(), 1);
    }

    #[test]
    fn full_chain() {
        let cfg = PostprocessConfig::default();
        let quiet = PredictionTrack::new(vec![0.0, 1.0, 2.0], vec![0.1; 3], 1.0).unwrap();
        let out = pipeline(&quiet, &cfg).unwrap();
        assert!(out.chews.is_empty() && out.bouts.is_empty() && out.meals.is_empty());

        // windows of 0.5 s at 0, 1, 2..5.5 reproduce chews (0,0.5),(1,1.5),(2,6)
        let mut starts = vec![0.0, 0.5, 1.0, 1.5];
        let mut scores = vec![1.0, 0.0, 1.0, 0.0];
        for k in 0..8 {
            starts.push(2.0 + 0.5 * k as f64);
            scores.push(1.0);
        }
        starts.push(6.0);
        scores.push(0.0);
        let track = PredictionTrack::new(starts, scores, 0.5).unwrap();
        let out = pipeline(&track, &cfg).unwrap();
        assert_eq!(out.chews, vec![iv(0.0, 0.5), iv(1.0, 1.5), iv(2.0, 6.0)]);
        assert_eq!(spans(&out.bouts), vec![iv(0.0, 6.0)]);
        assert_eq!(out.meals.iter().map(|m| m.interval).collect::<Vec<_>>(), vec![iv(0.0, 6.0)]);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let track = PredictionTrack::new(vec![0.0, 1.0, 2.5], vec![0.25, 0.5, 1.0], 5.0).unwrap();
        let p = dir.path().join("scores.csv");
        save_scores(&track, &p).unwrap();
        assert_eq!(load_scores(&p, 5.0).unwrap(), track);
        std::fs::write(&p, "window_start_s,score\n0,0.5\n1,oops\n").unwrap();
        assert!(load_scores(&p, 5.0).is_err());
    }
}
