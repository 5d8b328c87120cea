//! Core of the podcast fact-checking annotation pipeline.
//!
//! The crate is organised along the path data takes through the system:
//!
//! - [`feed`]: RSS 2.0 parsing and content-addressed audio download.
//! - [`transcript`]: word-timestamped ASR import and diarization merge.
//! - [`segment`]: sentence splitting, sliding windows and coreference.
//! - [`annotation`]: taxonomy, microtasks, validation and unanimous aggregation.
//! - [`store`]: embedded relational persistence with flexible querying.
//! - [`dataset`]: claim-detection and stance datasets, splits and statistics.
//! - [`metrics`]: WER/MER/CER alignment metrics and F1 reporting.
//! - [`synth`]: deterministic synthetic corpora for tests and benchmarks.

pub mod annotation;
pub mod dataset;
pub mod feed;
pub mod ids;
pub mod metrics;
pub mod segment;
pub mod store;
pub mod synth;
pub mod transcript;

pub use annotation::{
    AggregatedLabel, AggregationStatus, Annotation, AnnotationPayload, AnnotationTask,
    CheckworthyLabel, ClaimSpan, ClaimType, DocStance, Evidence, FactCheck, FactCheckPayload,
    Motivation, NotCheckableReason, Relevance, TranscriptionCorrection, Verdict,
};
pub use dataset::{ClaimExample, SplitSpec, StanceExample, StatisticsReport};
pub use feed::{AudioAsset, Category, Episode, PodcastFeed};
pub use ids::{AnnotationId, AnnotatorId, EpisodeId, FactCheckId, PodcastId, TaskId, UtteranceId};
pub use metrics::{AlignmentCounts, ErrorRates, F1Report};
pub use segment::{Utterance, Window};
pub use store::{QueryFilter, Store};
pub use transcript::{DiarizationSegment, Transcript, Word};

/// A value together with the non-fatal problems noticed while producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checked<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

impl<T> Checked<T> {
    pub fn new(value: T) -> Self {
        Self {
            value,
            warnings: Vec::new(),
        }
    }

    pub(crate) fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        tracing::warn!("{message}");
        self.warnings.push(message);
    }

    pub fn into_value(self) -> T {
        self.value
    }
}
