//! Word-timestamped ASR transcripts and their speaker attribution.
//!
//! ASR documents have the shape
//! `{"language": "en", "words": [{"text", "start", "end", "confidence"}]}` and
//! diarization documents `{"segments": [{"speaker", "start", "end"}]}`.

use serde::{Deserialize, Serialize};

use crate::ids::EpisodeId;
use crate::Checked;

/// Speaker label for words that no diarization segment overlaps.
pub const UNKNOWN_SPEAKER: &str = "UNK";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TranscriptError {
    #[error("ASR document parse error: {0}")]
    Parse(String),
    #[error("word {index} starts before the word preceding it")]
    TimestampOrder { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    /// Token text including any attached punctuation.
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiarizationSegment {
    pub speaker_id: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub episode_id: EpisodeId,
    pub language: String,
    pub words: Vec<Word>,
    /// Speaker per word index; empty until [`assign_speakers`] runs.
    pub speaker_of: Vec<String>,
}

impl Transcript {
    pub fn is_diarized(&self) -> bool {
        !self.words.is_empty() && self.speaker_of.len() == self.words.len()
    }

    pub fn speaker(&self, index: usize) -> &str {
        self.speaker_of
            .get(index)
            .map(String::as_str)
            .unwrap_or(UNKNOWN_SPEAKER)
    }

    /// Serializes back into the ASR document schema.
    pub fn to_asr_document(&self) -> String {
        let doc = RawAsr {
            language: self.language.clone(),
            words: self
                .words
                .iter()
                .map(|w| RawWord {
                    text: w.text.clone(),
                    start: w.start_s,
                    end: w.end_s,
                    confidence: Some(w.confidence),
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("ASR document serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct RawAsr {
    language: String,
    words: Vec<RawWord>,
}

#[derive(Serialize, Deserialize)]
struct RawWord {
    text: String,
    start: f64,
    end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
}

#[derive(Deserialize)]
struct RawDiarization {
    segments: Vec<RawSegment>,
}

#[derive(Deserialize)]
struct RawSegment {
    speaker: String,
    start: f64,
    end: f64,
}

/// Parses an ASR JSON document. Missing confidences default to 1.0 with a warning.
pub fn parse_asr_document(
    episode_id: EpisodeId,
    doc: &str,
) -> Result<Checked<Transcript>, TranscriptError> {
    let raw: RawAsr = serde_json::from_str(doc).map_err(|e| TranscriptError::Parse(e.to_string()))?;
    let mut missing_confidence = 0usize;
    let mut words = Vec::with_capacity(raw.words.len());
    for (index, w) in raw.words.into_iter().enumerate() {
        if w.text.is_empty() {
            return Err(TranscriptError::Parse(format!("word {index}: empty text")));
        }
        if !(w.start.is_finite() && w.end.is_finite() && 0.0 <= w.start && w.start <= w.end) {
            return Err(TranscriptError::Parse(format!(
                "word {index}: invalid span [{}, {}]",
                w.start, w.end
            )));
        }
        let confidence = match w.confidence {
            Some(c) if (0.0..=1.0).contains(&c) => c,
            Some(c) => {
                return Err(TranscriptError::Parse(format!(
                    "word {index}: confidence {c} outside [0, 1]"
                )))
            }
            None => {
                missing_confidence += 1;
                1.0
            }
        };
        if let Some(prev) = words.last().map(|p: &Word| p.start_s) {
            if w.start < prev {
                return Err(TranscriptError::TimestampOrder { index });
            }
        }
        words.push(Word {
            text: w.text,
            start_s: w.start,
            end_s: w.end,
            confidence,
        });
    }
    let mut out = Checked::new(Transcript {
        episode_id,
        language: raw.language,
        words,
        speaker_of: Vec::new(),
    });
    if missing_confidence > 0 {
        out.warn(format!("{missing_confidence} words lacked confidence; defaulted to 1.0"));
    }
    Ok(out)
}

pub fn parse_diarization(doc: &str) -> Result<Vec<DiarizationSegment>, TranscriptError> {
    let raw: RawDiarization =
        serde_json::from_str(doc).map_err(|e| TranscriptError::Parse(e.to_string()))?;
    raw.segments
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            if s.speaker.is_empty() {
                return Err(TranscriptError::Parse(format!("segment {i}: empty speaker")));
            }
            if !(s.start.is_finite() && s.end.is_finite() && s.start < s.end) {
                return Err(TranscriptError::Parse(format!(
                    "segment {i}: invalid span [{}, {}]",
                    s.start, s.end
                )));
            }
            Ok(DiarizationSegment {
                speaker_id: s.speaker,
                start_s: s.start,
                end_s: s.end,
            })
        })
        .collect()
}

/// Attributes each word to the segment with maximal temporal overlap. Ties go
/// to the earlier-starting segment; words touching no segment get [`UNKNOWN_SPEAKER`].
pub fn assign_speakers(mut transcript: Transcript, segments: &[DiarizationSegment]) -> Transcript {
    let mut order: Vec<&DiarizationSegment> = segments.iter().collect();
    order.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));

    transcript.speaker_of = transcript
        .words
        .iter()
        .map(|w| {
            let mut best: Option<(&DiarizationSegment, f64)> = None;
            for seg in &order {
                if seg.start_s > w.end_s {
                    break;
                }
                let overlap = w.end_s.min(seg.end_s) - w.start_s.max(seg.start_s);
                // Zero-length words count as overlapping a segment that contains them.
                let touches = overlap > 0.0
                    || (w.start_s == w.end_s && seg.start_s <= w.start_s && w.start_s <= seg.end_s);
                if !touches {
                    continue;
                }
                if best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((seg, overlap));
                }
            }
            best.map_or_else(|| UNKNOWN_SPEAKER.to_owned(), |(s, _)| s.speaker_id.clone())
        })
        .collect();
    transcript
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word(text: &str, start: f64, end: f64) -> Word {
        Word {
            text: text.into(),
            start_s: start,
            end_s: end,
            confidence: 1.0,
        }
    }

    fn seg(speaker: &str, start: f64, end: f64) -> DiarizationSegment {
        DiarizationSegment {
            speaker_id: speaker.into(),
            start_s: start,
            end_s: end,
        }
    }

    fn transcript(words: Vec<Word>) -> Transcript {
        Transcript {
            episode_id: "ep".into(),
            language: "en".into(),
            words,
            speaker_of: vec![],
        }
    }

    #[test]
    fn minimal_document() {
        let doc = r#"{"language":"en","words":[
            {"text":"Hello","start":0.0,"end":0.4,"confidence":0.99},
            {"text":"world.","start":0.5,"end":0.9,"confidence":0.97}]}"#;
        let t = parse_asr_document("ep".into(), doc).unwrap().value;
        assert_eq!(t.words.len(), 2);
        assert_eq!(t.words[1], Word { text: "world.".into(), start_s: 0.5, end_s: 0.9, confidence: 0.97 });
    }

    #[test]
    fn out_of_order_start_names_index() {
        let doc = r#"{"language":"en","words":[
            {"text":"a","start":0.0,"end":0.4,"confidence":1},
            {"text":"b","start":1.0,"end":1.4,"confidence":1},
            {"text":"c","start":0.5,"end":0.9,"confidence":1}]}"#;
        assert_eq!(
            parse_asr_document("ep".into(), doc).unwrap_err(),
            TranscriptError::TimestampOrder { index: 2 }
        );
    }

    #[test]
    fn schema_violations() {
        for doc in [
            r#"{"words":[]}"#,
            r#"{"language":"en","words":[{"text":"","start":0,"end":1,"confidence":1}]}"#,
            r#"{"language":"en","words":[{"text":"a","start":2,"end":1,"confidence":1}]}"#,
            r#"{"language":"en","words":[{"text":"a","start":0,"end":1,"confidence":1.5}]}"#,
            r#"{"language":"en","words":[{"text":"a","start":-1,"end":1,"confidence":1}]}"#,
        ] {
            assert!(matches!(parse_asr_document("ep".into(), doc), Err(TranscriptError::Parse(_))), "{doc}");
        }
    }

    #[test]
    fn missing_confidence_defaults_with_warning() {
        let doc = r#"{"language":"de","words":[{"text":"Hallo","start":0,"end":1}]}"#;
        let parsed = parse_asr_document("ep".into(), doc).unwrap();
        assert_eq!(parsed.value.words[0].confidence, 1.0);
        assert_eq!(parsed.warnings.len(), 1);
    }

    #[test]
    fn speaker_containment_straddle_and_unknown() {
        let t = transcript(vec![word("a", 1.0, 1.5), word("b", 4.8, 5.4), word("c", 20.0, 21.0)]);
        let out = assign_speakers(t, &[seg("A", 0.0, 5.0), seg("B", 5.0, 10.0)]);
        assert_eq!(out.speaker_of, ["A", "B", UNKNOWN_SPEAKER]);
    }

    #[test]
    fn overlap_tie_goes_to_earlier_segment() {
        let t = transcript(vec![word("a", 4.5, 5.5)]);
        let out = assign_speakers(t, &[seg("B", 5.0, 10.0), seg("A", 0.0, 5.0)]);
        assert_eq!(out.speaker_of, ["A"]);
    }

    #[test]
    fn diarization_document() {
        let segs = parse_diarization(r#"{"segments":[{"speaker":"S1","start":0,"end":2.5}]}"#).unwrap();
        assert_eq!(segs, [seg("S1", 0.0, 2.5)]);
        assert!(parse_diarization(r#"{"segments":[{"speaker":"S1","start":2,"end":2}]}"#).is_err());
    }
}
