//! Sentence utterances, sliding context windows and coreference rewriting.

mod coref;

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::ids::{EpisodeId, UtteranceId};
use crate::transcript::Transcript;
use crate::Checked;

pub use coref::{
    CommandResolver, CoreferenceResolver, HttpResolver, IdentityResolver, ResolverError,
    ResolverSpec,
};

pub const DEFAULT_WINDOW_SIZE: usize = 50;
pub const DEFAULT_WINDOW_STRIDE: usize = 25;

/// Tokens ending in `.` that do not end a sentence. Compared case-insensitively.
pub const ABBREVIATIONS: [&str; 11] = [
    "mr.", "mrs.", "ms.", "dr.", "st.", "vs.", "etc.", "e.g.", "i.e.", "nr.", "ca.",
];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SegmentError {
    #[error("transcript has no words")]
    EmptyTranscript,
    #[error("invalid window parameters: {0}")]
    Parameter(String),
    #[error("resolver returned {got} sentences for a window of {expected}")]
    ResolverContract { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub utterance_id: UtteranceId,
    pub episode_id: EpisodeId,
    pub index: usize,
    pub text: String,
    pub resolved_text: Option<String>,
    pub start_s: f64,
    pub end_s: f64,
    pub speaker_id: String,
    pub mean_confidence: f64,
    /// Index of the first transcript word in this utterance.
    pub first_word: usize,
    pub word_count: usize,
}

impl Utterance {
    pub fn id_for(episode_id: &EpisodeId, index: usize) -> UtteranceId {
        UtteranceId::new(format!("{episode_id}-u{index:05}"))
    }

    /// Text used for downstream datasets: the resolved form when available.
    pub fn best_text(&self) -> &str {
        self.resolved_text.as_deref().unwrap_or(&self.text)
    }

    pub fn words(&self) -> Range<usize> {
        self.first_word..self.first_word + self.word_count
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub episode_id: EpisodeId,
    /// Half-open range of utterance ordinals.
    pub utterance_range: Range<usize>,
}

/// True when `word` closes a sentence.
pub fn ends_sentence(word: &str) -> bool {
    let core = word.trim_end_matches(['"', '\'', ')', '\u{201d}', '\u{2019}', '\u{00bb}']);
    let Some(last) = core.chars().last() else {
        return false;
    };
    match last {
        '!' | '?' => true,
        '.' => !is_abbreviation(core),
        _ => false,
    }
}

fn is_abbreviation(token: &str) -> bool {
    let token = token.trim_start_matches(['"', '\'', '(', '\u{201c}', '\u{2018}', '\u{00ab}']);
    let lower = token.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    // Single-letter initials such as "J."
    let mut chars = token.chars();
    matches!((chars.next(), chars.next(), chars.next()), (Some(c), Some('.'), None) if c.is_alphabetic())
}

/// Splits a transcript into sentence utterances at terminal punctuation.
pub fn split_sentences(transcript: &Transcript) -> Result<Vec<Utterance>, SegmentError> {
    if transcript.words.is_empty() {
        return Err(SegmentError::EmptyTranscript);
    }
    let mut out = Vec::new();
    let mut start = 0;
    for (i, word) in transcript.words.iter().enumerate() {
        let last = i + 1 == transcript.words.len();
        if ends_sentence(&word.text) || last {
            out.push(build_utterance(transcript, out.len(), start..i + 1));
            start = i + 1;
        }
    }
    Ok(out)
}

fn build_utterance(transcript: &Transcript, index: usize, words: Range<usize>) -> Utterance {
    let slice = &transcript.words[words.clone()];
    let text = slice
        .iter()
        .map(|w| w.text.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let mean_confidence = slice.iter().map(|w| w.confidence).sum::<f64>() / slice.len() as f64;

    // Majority speaker; among tied speakers the one heard first wins.
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for (offset, i) in words.clone().enumerate() {
        counts.entry(transcript.speaker(i)).or_insert((0, offset)).0 += 1;
    }
    let speaker_id = counts
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(s, _)| s.to_owned())
        .expect("utterance has at least one word");

    Utterance {
        utterance_id: Utterance::id_for(&transcript.episode_id, index),
        episode_id: transcript.episode_id.clone(),
        index,
        text,
        resolved_text: None,
        start_s: slice[0].start_s,
        end_s: slice[slice.len() - 1].end_s,
        speaker_id,
        mean_confidence,
        first_word: words.start,
        word_count: words.len(),
    }
}

/// Windows `[k*stride, min(k*stride + size, n))` until index `n - 1` is covered.
pub fn build_windows(
    episode_id: &EpisodeId,
    n_utterances: usize,
    size: usize,
    stride: usize,
) -> Result<Vec<Window>, SegmentError> {
    if size < 1 || stride < 1 {
        return Err(SegmentError::Parameter(format!(
            "size and stride must be positive (size={size}, stride={stride})"
        )));
    }
    if stride > size {
        return Err(SegmentError::Parameter(format!(
            "stride {stride} larger than size {size} would leave gaps"
        )));
    }
    let mut windows = Vec::new();
    let mut lo = 0;
    while lo < n_utterances {
        let hi = (lo + size).min(n_utterances);
        windows.push(Window {
            episode_id: episode_id.clone(),
            utterance_range: lo..hi,
        });
        if hi == n_utterances {
            break;
        }
        lo += stride;
    }
    Ok(windows)
}

/// Rewrites utterances through `resolver`, one call per window. Each utterance
/// takes its resolved text from the last successful window containing it;
/// utterances with no successful window keep their original text.
pub fn apply_coref(
    mut utterances: Vec<Utterance>,
    windows: &[Window],
    resolver: &dyn CoreferenceResolver,
) -> Result<Checked<Vec<Utterance>>, SegmentError> {
    let mut resolved: Vec<Option<String>> = vec![None; utterances.len()];
    let mut warnings = Vec::new();
    for (w, window) in windows.iter().enumerate() {
        let range = window.utterance_range.start.min(utterances.len())
            ..window.utterance_range.end.min(utterances.len());
        let sentences: Vec<String> = utterances[range.clone()].iter().map(|u| u.text.clone()).collect();
        match resolver.resolve(&sentences) {
            Ok(out) if out.len() != sentences.len() => {
                return Err(SegmentError::ResolverContract {
                    expected: sentences.len(),
                    got: out.len(),
                })
            }
            Ok(out) => {
                for (slot, text) in resolved[range].iter_mut().zip(out) {
                    *slot = Some(text);
                }
            }
            Err(e) => warnings.push(format!("resolver failed on window {w} ({range:?}): {e}")),
        }
    }
    for (u, r) in utterances.iter_mut().zip(resolved) {
        u.resolved_text = Some(r.filter(|t| !t.trim().is_empty()).unwrap_or_else(|| u.text.clone()));
    }
    let mut out = Checked::new(utterances);
    for w in warnings {
        out.warn(w);
    }
    Ok(out)
}
