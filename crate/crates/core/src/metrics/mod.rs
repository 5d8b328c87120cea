//! Transcription error rates and classification reports.
//!
//! Text is normalized before word and character alignment: lowercase,
//! the characters `. , ! ? ; : " ( )` stripped from token edges, whitespace
//! collapsed. Apostrophes inside words survive.

mod align;
mod f1;
mod report;

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

pub use align::{align, AlignmentCounts};
pub use f1::{f1_report, round_half_up, weighted_f1, ClassScores, F1Report};
pub use report::{evaluate_predictions, EvalTask, EvaluationReport};

const EDGE_PUNCTUATION: [char; 9] = ['.', ',', '!', '?', ';', ':', '"', '(', ')'];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("reference is empty after normalization")]
    UndefinedMetric,
    #[error("{golds} gold labels but {preds} predictions")]
    Length { golds: usize, preds: usize },
    #[error("no items to score")]
    Empty,
    #[error("ids do not line up: missing predictions for {missing_predictions:?}, unknown ids {unknown_ids:?}")]
    Alignment {
        missing_predictions: Vec<String>,
        unknown_ids: Vec<String>,
    },
    #[error("malformed line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub wer: f64,
    pub mer: f64,
    pub cer: f64,
}

pub fn normalize(text: &str) -> String {
    normalized_words(text).join(" ")
}

pub fn normalized_words(text: &str) -> Vec<Cow<'_, str>> {
    text.split_whitespace()
        .map(|t| t.trim_matches(EDGE_PUNCTUATION))
        .filter(|t| !t.is_empty())
        .map(|t| {
            if t.chars().any(char::is_uppercase) {
                Cow::Owned(t.to_lowercase())
            } else {
                Cow::Borrowed(t)
            }
        })
        .collect()
}

/// Codepoints of `normalize(text)` without building the joined string.
fn normalized_chars(words: &[Cow<'_, str>]) -> Vec<char> {
    let mut out = Vec::with_capacity(words.iter().map(|w| w.len() + 1).sum());
    for (k, w) in words.iter().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        out.extend(w.chars());
    }
    out
}

/// (S + D + I) / N over normalized words.
pub fn word_error_rate(reference: &str, hypothesis: &str) -> Result<f64, MetricError> {
    let r = normalized_words(reference);
    let h = normalized_words(hypothesis);
    if r.is_empty() {
        return Err(MetricError::UndefinedMetric);
    }
    let c = align(&r, &h);
    Ok(c.errors() as f64 / r.len() as f64)
}

/// (S + D + I) / (S + D + I + C); 0 when both sides are empty.
pub fn match_error_rate(reference: &str, hypothesis: &str) -> f64 {
    let c = align(&normalized_words(reference), &normalized_words(hypothesis));
    mer_from_counts(&c)
}

pub fn mer_from_counts(c: &AlignmentCounts) -> f64 {
    let denominator = c.errors() + c.correct;
    if denominator == 0 {
        0.0
    } else {
        c.errors() as f64 / denominator as f64
    }
}

/// (S + D + I) / N over codepoints of the normalized text, spaces included.
pub fn char_error_rate(reference: &str, hypothesis: &str) -> Result<f64, MetricError> {
    let r = normalized_chars(&normalized_words(reference));
    let h = normalized_chars(&normalized_words(hypothesis));
    if r.is_empty() {
        return Err(MetricError::UndefinedMetric);
    }
    Ok(align(&r, &h).errors() as f64 / r.len() as f64)
}

/// All three rates from one normalization and one word alignment.
pub fn error_rates(reference: &str, hypothesis: &str) -> Result<ErrorRates, MetricError> {
    let r = normalized_words(reference);
    let h = normalized_words(hypothesis);
    if r.is_empty() {
        return Err(MetricError::UndefinedMetric);
    }
    let words = align(&r, &h);
    let rc = normalized_chars(&r);
    let cer = align(&rc, &normalized_chars(&h)).errors() as f64 / rc.len() as f64;
    Ok(ErrorRates {
        wer: words.errors() as f64 / r.len() as f64,
        mer: mer_from_counts(&words),
        cer,
    })
}
