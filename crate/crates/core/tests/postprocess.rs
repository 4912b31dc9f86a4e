mod common;

use chewing_ssl::interval::check_sorted_disjoint;
use chewing_ssl::postprocess::{pipeline, PipelineOutput, PostprocessConfig, PredictionTrack};
use common::{random_track, rng, rule_interpreter, RuleOutput};
use proptest::prelude::*;

fn pairs(out: &PipelineOutput) -> RuleOutput {
    RuleOutput {
        chews: out.chews.iter().map(|c| (c.start_s, c.end_s)).collect(),
        bouts: out.bouts.iter().map(|b| (b.interval.start_s, b.interval.end_s)).collect(),
        meals: out.meals.iter().map(|m| (m.interval.start_s, m.interval.end_s)).collect(),
    }
}

fn run(starts: &[f64], scores: &[f64], window_s: f64) -> RuleOutput {
    let track = PredictionTrack::new(starts.to_vec(), scores.to_vec(), window_s).unwrap();
    pairs(&pipeline(&track, &PostprocessConfig::default()).unwrap())
}

#[test]
fn agrees_with_rule_interpreter_on_random_tracks() {
    let cfg = PostprocessConfig::default();
    let mut r = rng(5);
    let mut meals_seen = 0;
    for _ in 0..300 {
        let (starts, scores, w) = random_track(&mut r);
        let got = run(&starts, &scores, w);
        assert_eq!(got, rule_interpreter(&starts, &scores, w, &cfg));
        meals_seen += got.meals.len();
    }
    assert!(meals_seen > 0);
}

/// One-second windows: `on` lists `(first start, count)` of scoring runs.
fn track(on: &[(f64, usize)]) -> (Vec<f64>, Vec<f64>) {
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

#[test]
fn chew_gap_of_exactly_two_seconds_merges() {
    let (s, p) = track(&[(0.0, 3), (5.0, 3)]);
    assert_eq!(run(&s, &p, 1.0).bouts, vec![(0.0, 8.0)]);
    let (s, p) = track(&[(0.0, 3), (5.5, 3)]);
    assert!(run(&s, &p, 1.0).bouts.is_empty());
}

#[test]
fn bout_of_exactly_five_seconds_is_kept() {
    let (s, p) = track(&[(0.0, 5)]);
    assert_eq!(run(&s, &p, 1.0).bouts, vec![(0.0, 5.0)]);
    let (s, p) = track(&[(0.0, 4)]);
    assert!(run(&s, &p, 1.0).bouts.is_empty());
}

#[test]
fn bout_gap_of_exactly_sixty_seconds_merges() {
    let (s, p) = track(&[(0.0, 40), (100.0, 40)]);
    assert_eq!(run(&s, &p, 1.0).meals, vec![(0.0, 140.0)]);
    let (s, p) = track(&[(0.0, 40), (101.0, 40)]);
    assert_eq!(run(&s, &p, 1.0).meals, vec![(0.0, 40.0), (101.0, 141.0)]);
}

#[test]
fn meal_ratio_of_exactly_a_quarter_is_kept() {
    // bouts [0, 10) and [70, 80): 20 s of chewing over an 80 s span
    let (s, p) = track(&[(0.0, 10), (70.0, 10)]);
    let out = run(&s, &p, 1.0);
    assert_eq!(out.meals, vec![(0.0, 80.0)]);
    let (s, p) = track(&[(0.0, 10), (70.0, 9)]);
    assert!(run(&s, &p, 1.0).meals.is_empty());
}

proptest! {
    #[test]
    fn stages_respect_their_rules(seed in any::<u64>()) {
        let cfg = PostprocessConfig::default();
        let (starts, scores, w) = random_track(&mut rng(seed));
        let track = PredictionTrack::new(starts, scores, w).unwrap();
        let out = pipeline(&track, &cfg).unwrap();
        for b in &out.bouts {
            prop_assert!(b.interval.duration() >= cfg.min_bout_s);
            prop_assert!(b.chews.iter().all(|c| b.interval.contains(c)));
        }
        for pair in out.bouts.windows(2) {
            prop_assert!(pair[1].interval.start_s >= pair[0].interval.start_s);
        }
        let meal_spans: Vec<_> = out.meals.iter().map(|m| m.interval).collect();
        prop_assert!(check_sorted_disjoint(&meal_spans).is_ok());
        for pair in meal_spans.windows(2) {
            prop_assert!(pair[1].start_s - pair[0].end_s > cfg.max_bout_gap_s);
        }
        for m in &out.meals {
            prop_assert!(m.bout_ratio() >= cfg.min_meal_ratio);
            prop_assert!(m.bout_ratio() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn raising_the_threshold_never_adds_chew_time(seed in any::<u64>(), lo in 0.0f64..0.5, extra in 0.0f64..0.5) {
        let (starts, scores, w) = random_track(&mut rng(seed));
        let track = PredictionTrack::new(starts, scores, w).unwrap();
        let covered = |t: f64| {
            let cfg = PostprocessConfig { score_threshold: t, ..PostprocessConfig::default() };
            let (mut total, mut reach) = (0.0, f64::NEG_INFINITY);
            for c in pipeline(&track, &cfg).unwrap().chews {
                total += (c.end_s - c.start_s.max(reach)).max(0.0);
                reach = reach.max(c.end_s);
            }
            total
        };
        prop_assert!(covered(lo + extra) <= covered(lo) + 1e-9);
    }
}
