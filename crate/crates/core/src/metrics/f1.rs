use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::MetricError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class: BTreeMap<String, ClassScores>,
    /// Support-weighted mean of per-class F1.
    pub weighted_f1: f64,
}

/// Per-class precision, recall and F1 (0 whenever a denominator is 0).
pub fn f1_report<L: AsRef<str>>(golds: &[L], preds: &[L]) -> Result<F1Report, MetricError> {
    if golds.len() != preds.len() {
        return Err(MetricError::Length {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    if golds.is_empty() {
        return Err(MetricError::Empty);
    }
    let classes: BTreeSet<&str> = golds.iter().chain(preds).map(AsRef::as_ref).collect();
    let mut per_class = BTreeMap::new();
    for class in classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (g, p) in golds.iter().zip(preds) {
            match (g.as_ref() == class, p.as_ref() == class) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        per_class.insert(
            class.to_owned(),
            ClassScores {
                precision,
                recall,
                f1,
                support: tp + fn_,
            },
        );
    }
    let weighted = weighted_f1(per_class.values().map(|s| (s.f1, s.support)));
    Ok(F1Report {
        per_class,
        weighted_f1: weighted,
    })
}

/// Σ f1·support / Σ support, or 0 for zero total support.
pub fn weighted_f1(scores: impl IntoIterator<Item = (f64, usize)>) -> f64 {
    let (num, den) = scores
        .into_iter()
        .fold((0.0, 0usize), |(num, den), (f1, support)| (num + f1 * support as f64, den + support));
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

/// Rounds half away from zero at `decimals` places, correcting for binary
/// representation error (0.845 rounds to 0.85).
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x * scale;
    let nudge = scaled.abs() * f64::EPSILON * 4.0;
    let rounded = if scaled >= 0.0 {
        (scaled + nudge + 0.5).floor()
    } else {
        -((-scaled + nudge + 0.5).floor())
    };
    rounded / scale
}
