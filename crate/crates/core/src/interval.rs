use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open time span `[start_s, end_s)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Interval {
    pub start_s: f64,
    pub end_s: f64,
}

impl Interval {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self> {
        if !(start_s.is_finite() && end_s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "interval bounds must be finite, got ({start_s}, {end_s})"
            )));
        }
        if start_s < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "interval start must be non-negative, got {start_s}"
            )));
        }
        if start_s >= end_s {
            return Err(Error::InvalidArgument(format!(
                "interval start {start_s} must precede end {end_s}"
            )));
        }
        Ok(Self { start_s, end_s })
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Length of the intersection with `other` (0 when disjoint).
    pub fn overlap(&self, other: &Interval) -> f64 {
        (self.end_s.min(other.end_s) - self.start_s.max(other.start_s)).max(0.0)
    }

    pub fn contains(&self, other: &Interval) -> bool {
        self.start_s <= other.start_s && other.end_s <= self.end_s
    }
}

/// Checks that intervals are sorted by start and pairwise disjoint.
///
/// Touching intervals (`a.end == b.start`) count as disjoint.
pub fn check_sorted_disjoint(intervals: &[Interval]) -> Result<()> {
    for (i, pair) in intervals.windows(2).enumerate() {
        if pair[1].start_s < pair[0].end_s {
            return Err(Error::InvalidArgument(format!(
                "intervals {i} and {} are unsorted or overlapping: {:?}, {:?}",
                i + 1,
                pair[0],
                pair[1]
            )));
        }
    }
    Ok(())
}
