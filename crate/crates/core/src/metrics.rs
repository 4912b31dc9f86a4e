//! Sample-level binary classification metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// Counts with chewing (`true`) as the positive class.
pub fn confusion(predictions: &[bool], labels: &[bool]) -> Result<Confusion> {
    ensure!(
        predictions.len() == labels.len(),
        InvalidArgument,
        "{} predictions for {} labels",
        predictions.len(),
        labels.len()
    );
    ensure!(!labels.is_empty(), InvalidArgument, "no predictions to score");
    let mut c = Confusion::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Metrics whose denominator vanished; the value is then reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedFlags {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
    pub specificity: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Mean of the per-class recalls (balanced accuracy).
    pub weighted_accuracy: f64,
    pub undefined: UndefinedFlags,
    pub confusion: Confusion,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn report(c: &Confusion) -> Result<MetricsReport> {
    ensure!(c.total() > 0, InvalidArgument, "empty confusion matrix");
    let (precision, p_undef) = ratio(c.tp, c.tp + c.fp);
    let (recall, r_undef) = ratio(c.tp, c.tp + c.fn_);
    let (tnr, tnr_undef) = ratio(c.tn, c.tn + c.fp);
    let (f1, f1_undef) = if precision + recall == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / (precision + recall), false)
    };
    let accuracy = (c.tp + c.tn) as f64 / c.total() as f64;
    Ok(MetricsReport {
        precision,
        recall,
        f1,
        accuracy,
        weighted_accuracy: 0.5 * (recall + tnr),
        undefined: UndefinedFlags { precision: p_undef, recall: r_undef, f1: f1_undef, specificity: tnr_undef },
        confusion: *c,
    })
}

/// Aligned text table, one row per labelled report. Undefined values carry a `*`.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}", "model", "prec.", "rec.", "F1", "acc.", "w.acc.");
    for (label, r) in rows {
        let cell = |v: f64, undef: bool| format!("{v:.3}{}", if undef { "*" } else { "" });
        let _ = writeln!(
            out,
            "{label:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}",
            cell(r.precision, r.undefined.precision),
            cell(r.recall, r.undefined.recall),
            cell(r.f1, r.undefined.f1),
            cell(r.accuracy, false),
            cell(r.weighted_accuracy, r.undefined.recall || r.undefined.specificity),
        );
    }
    out
}
