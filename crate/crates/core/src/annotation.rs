//! Annotation taxonomy and the rules of the crowdsourcing workflow.
//!
//! Everything here is pure: payload validation, microtask sizing, task
//! claiming, unanimous aggregation and fact-check gating. The [`crate::store`]
//! applies these rules transactionally against persisted state.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::ids::{AnnotationId, AnnotatorId, EpisodeId, FactCheckId, TaskId, UtteranceId};
use crate::segment::Utterance;
use crate::Checked;

/// Annotators per task, and the number of agreeing labels required to retain one.
pub const QUORUM: usize = 3;
/// Hard upper bound on a microtask's estimated working time.
pub const MAX_TASK_MINUTES: f64 = 30.0;
pub const DEFAULT_CAP_MINUTES: f64 = 20.0;
/// Estimated annotation minutes per minute of audio.
pub const MINUTES_PER_AUDIO_MINUTE: f64 = 1.5;
/// Claims with no activity for this long are released for reassignment.
pub const STALE_CLAIM_HOURS: i64 = 48;

macro_rules! wire_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $wire:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $wire)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $wire),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($wire => Ok($name::$variant),)+
                    other => Err(format!("unknown {} {other:?}", stringify!($name))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

wire_enum!(CheckworthyLabel {
    CheckWorthy => "CHECK_WORTHY",
    NotCheckWorthy => "NOT_CHECK_WORTHY",
});

wire_enum!(
    /// Kinds of checkable claim.
    ClaimType {
        FactualDescription => "FACTUAL_DESCRIPTION",
        CauseAndEffect => "CAUSE_AND_EFFECT",
        NumericalClaim => "NUMERICAL_CLAIM",
        Quotation => "QUOTATION",
    }
);

wire_enum!(
    /// Why an utterance is not checkable.
    NotCheckableReason {
        NonFactualStatement => "NON_FACTUAL_STATEMENT",
        BroadcastDetails => "BROADCAST_DETAILS",
        EmotionsAndOpinions => "EMOTIONS_AND_OPINIONS",
        PersonalExperience => "PERSONAL_EXPERIENCE",
        Prediction => "PREDICTION",
    }
);

wire_enum!(
    /// Why an annotator thinks a claim should be fact-checked. Multi-select.
    Motivation {
        PotentialHarm => "POTENTIAL_HARM",
        ProminentPerson => "PROMINENT_PERSON",
        PublicInterest => "PUBLIC_INTEREST",
        Surprising => "SURPRISING",
        LearnMore => "LEARN_MORE",
    }
);

wire_enum!(AggregationStatus {
    Pending => "PENDING",
    Retained => "RETAINED",
    Discarded => "DISCARDED",
});

wire_enum!(Relevance {
    Relevant => "RELEVANT",
    NotRelevant => "NOT_RELEVANT",
});

wire_enum!(DocStance {
    Supports => "SUPPORTS",
    Refutes => "REFUTES",
    Neutral => "NEUTRAL",
});

wire_enum!(Verdict {
    Supports => "SUPPORTS",
    Refutes => "REFUTES",
});

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid {field}: {message}")]
pub struct ValidationError {
    pub field: &'static str,
    pub message: String,
}

impl ValidationError {
    fn new(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            field,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("annotator {annotator} is not assigned to task {task}")]
    NotAssigned { task: TaskId, annotator: AnnotatorId },
    #[error("task {0} already has {QUORUM} annotators")]
    TaskFull(TaskId),
    #[error("annotator {annotator} already claimed task {task}")]
    AlreadyAssigned { task: TaskId, annotator: AnnotatorId },
    #[error("utterance {0} is not a retained check-worthy claim")]
    NotEligible(UtteranceId),
    #[error("episode {0} has no utterances")]
    EmptyEpisode(EpisodeId),
    #[error("invalid task parameters: {0}")]
    Parameter(String),
}

/// Character span of the claim, in Unicode codepoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimSpan {
    pub utterance_id: UtteranceId,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptionCorrection {
    pub utterance_id: UtteranceId,
    pub corrected_text: String,
}

/// What an annotator submits for one utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationPayload {
    pub utterance_id: UtteranceId,
    pub label: CheckworthyLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim_type: Option<ClaimType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<NotCheckableReason>,
    #[serde(default)]
    pub motivations: Vec<Motivation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<ClaimSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<TranscriptionCorrection>,
}

impl AnnotationPayload {
    pub fn check_worthy(utterance_id: impl Into<UtteranceId>, claim_type: ClaimType) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            label: CheckworthyLabel::CheckWorthy,
            claim_type: Some(claim_type),
            reason: None,
            motivations: Vec::new(),
            span: None,
            correction: None,
        }
    }

    pub fn not_check_worthy(utterance_id: impl Into<UtteranceId>, reason: NotCheckableReason) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            label: CheckworthyLabel::NotCheckWorthy,
            claim_type: None,
            reason: Some(reason),
            motivations: Vec::new(),
            span: None,
            correction: None,
        }
    }

    pub fn with_motivations(mut self, motivations: impl IntoIterator<Item = Motivation>) -> Self {
        self.motivations = motivations.into_iter().collect();
        self
    }

    /// Checks the taxonomy exclusivity rules and, against the utterance text,
    /// the span bounds and correction.
    pub fn validate(&self, utterance_text: &str) -> Result<(), ValidationError> {
        self.validate_taxonomy()?;
        if let Some(span) = &self.span {
            if span.utterance_id != self.utterance_id {
                return Err(ValidationError::new("span", "span refers to a different utterance"));
            }
            let len = utterance_text.chars().count();
            if !(span.char_start < span.char_end && span.char_end <= len) {
                return Err(ValidationError::new(
                    "span",
                    format!("[{}, {}) is not a non-empty range within {len} characters", span.char_start, span.char_end),
                ));
            }
        }
        if let Some(correction) = &self.correction {
            if correction.utterance_id != self.utterance_id {
                return Err(ValidationError::new("correction", "correction refers to a different utterance"));
            }
            if correction.corrected_text.trim().is_empty() {
                return Err(ValidationError::new("correction", "corrected text is empty"));
            }
            if correction.corrected_text == utterance_text {
                return Err(ValidationError::new("correction", "corrected text equals the original"));
            }
        }
        Ok(())
    }

    /// The label-dependent rules alone; needs no utterance context.
    pub fn validate_taxonomy(&self) -> Result<(), ValidationError> {
        match self.label {
            CheckworthyLabel::CheckWorthy => {
                if self.reason.is_some() {
                    return Err(ValidationError::new("reason", "a check-worthy claim has no not-checkable reason"));
                }
                if self.claim_type.is_none() {
                    return Err(ValidationError::new("claim_type", "a check-worthy claim needs a claim type"));
                }
            }
            CheckworthyLabel::NotCheckWorthy => {
                if self.claim_type.is_some() {
                    return Err(ValidationError::new("claim_type", "only check-worthy claims have a claim type"));
                }
                if self.reason.is_none() {
                    return Err(ValidationError::new("reason", "a not-check-worthy utterance needs a reason"));
                }
                if !self.motivations.is_empty() {
                    return Err(ValidationError::new("motivations", "only check-worthy claims carry motivations"));
                }
                if self.span.is_some() {
                    return Err(ValidationError::new("span", "only check-worthy claims carry a span"));
                }
            }
        }
        let mut seen = self.motivations.clone();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(ValidationError::new("motivations", "duplicate motivation"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotation_id: AnnotationId,
    pub task_id: TaskId,
    pub utterance_id: UtteranceId,
    pub annotator_id: AnnotatorId,
    pub label: CheckworthyLabel,
    pub claim_type: Option<ClaimType>,
    pub reason: Option<NotCheckableReason>,
    /// Sorted, without duplicates.
    pub motivations: Vec<Motivation>,
    pub span: Option<ClaimSpan>,
    pub correction: Option<TranscriptionCorrection>,
    pub submitted_at: DateTime<Utc>,
}

impl Annotation {
    pub fn from_payload(
        annotation_id: AnnotationId,
        task_id: TaskId,
        annotator_id: AnnotatorId,
        payload: AnnotationPayload,
        submitted_at: DateTime<Utc>,
    ) -> Self {
        let mut motivations = payload.motivations;
        motivations.sort();
        motivations.dedup();
        Self {
            annotation_id,
            task_id,
            utterance_id: payload.utterance_id,
            annotator_id,
            label: payload.label,
            claim_type: payload.claim_type,
            reason: payload.reason,
            motivations,
            span: payload.span,
            correction: payload.correction,
            submitted_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedLabel {
    pub utterance_id: UtteranceId,
    pub status: AggregationStatus,
    pub label: Option<CheckworthyLabel>,
    pub claim_type: Option<ClaimType>,
    pub reason: Option<NotCheckableReason>,
    /// Multiset union of every annotator's motivations, sorted.
    pub motivations: Vec<Motivation>,
}

impl AggregatedLabel {
    pub fn is_retained_check_worthy(&self) -> bool {
        self.status == AggregationStatus::Retained && self.label == Some(CheckworthyLabel::CheckWorthy)
    }
}

/// Unanimous aggregation over one utterance's live annotations.
///
/// Fewer than [`QUORUM`] annotations stay pending. With a full quorum the label
/// is retained only if all agree; claim type and reason are then carried only
/// when they are unanimous as well.
pub fn aggregate(utterance_id: &UtteranceId, annotations: &[Annotation]) -> AggregatedLabel {
    let mut motivations: Vec<Motivation> =
        annotations.iter().flat_map(|a| a.motivations.iter().copied()).collect();
    motivations.sort();
    let mut out = AggregatedLabel {
        utterance_id: utterance_id.clone(),
        status: AggregationStatus::Pending,
        label: None,
        claim_type: None,
        reason: None,
        motivations,
    };
    if annotations.len() < QUORUM {
        return out;
    }
    let label = annotations[0].label;
    if annotations.iter().any(|a| a.label != label) {
        out.status = AggregationStatus::Discarded;
        return out;
    }
    out.status = AggregationStatus::Retained;
    out.label = Some(label);
    out.claim_type = unanimous(annotations.iter().map(|a| a.claim_type));
    out.reason = unanimous(annotations.iter().map(|a| a.reason));
    out
}

fn unanimous<T: PartialEq + Copy>(mut values: impl Iterator<Item = Option<T>>) -> Option<T> {
    let first = values.next()??;
    values.all(|v| v == Some(first)).then_some(first)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: TaskId,
    pub episode_id: EpisodeId,
    pub utterance_range: Range<usize>,
    pub estimated_minutes: f64,
    /// In claim order; at most [`QUORUM`].
    pub assignees: Vec<AnnotatorId>,
}

impl AnnotationTask {
    pub fn id_for(episode_id: &EpisodeId, ordinal: usize) -> TaskId {
        TaskId::new(format!("{episode_id}-t{ordinal:03}"))
    }

    pub fn contains(&self, utterance_index: usize) -> bool {
        self.utterance_range.contains(&utterance_index)
    }

    pub fn is_assigned(&self, annotator: &AnnotatorId) -> bool {
        self.assignees.contains(annotator)
    }

    /// Adds `annotator` to the assignees.
    pub fn claim(&mut self, annotator: &AnnotatorId) -> Result<(), WorkflowError> {
        if self.is_assigned(annotator) {
            return Err(WorkflowError::AlreadyAssigned {
                task: self.task_id.clone(),
                annotator: annotator.clone(),
            });
        }
        if self.assignees.len() >= QUORUM {
            return Err(WorkflowError::TaskFull(self.task_id.clone()));
        }
        self.assignees.push(annotator.clone());
        Ok(())
    }
}

/// Estimated working minutes for annotating `utterances`.
pub fn estimate_minutes(utterances: &[Utterance]) -> f64 {
    let start = utterances.iter().map(|u| u.start_s).fold(f64::INFINITY, f64::min);
    let end = utterances.iter().map(|u| u.end_s).fold(f64::NEG_INFINITY, f64::max);
    if utterances.is_empty() {
        return 0.0;
    }
    MINUTES_PER_AUDIO_MINUTE * (end - start).max(0.0) / 60.0
}

/// Packs consecutive utterances into microtasks whose estimate stays within
/// `cap_minutes`. A single utterance above the cap becomes its own task.
pub fn create_microtasks(
    episode_id: &EpisodeId,
    utterances: &[Utterance],
    cap_minutes: f64,
) -> Result<Checked<Vec<AnnotationTask>>, WorkflowError> {
    if utterances.is_empty() {
        return Err(WorkflowError::EmptyEpisode(episode_id.clone()));
    }
    if !(cap_minutes > 0.0 && cap_minutes <= MAX_TASK_MINUTES) {
        return Err(WorkflowError::Parameter(format!(
            "cap_minutes must be in (0, {MAX_TASK_MINUTES}], got {cap_minutes}"
        )));
    }
    if utterances.windows(2).any(|w| w[1].index != w[0].index + 1) {
        return Err(WorkflowError::Parameter("utterance indices are not contiguous".into()));
    }

    let base = utterances[0].index;
    let mut out = Checked::new(Vec::new());
    let mut lo = 0;
    while lo < utterances.len() {
        let mut hi = lo + 1;
        while hi < utterances.len() && estimate_minutes(&utterances[lo..hi + 1]) <= cap_minutes {
            hi += 1;
        }
        let estimated_minutes = estimate_minutes(&utterances[lo..hi]);
        if estimated_minutes > cap_minutes {
            out.warn(format!(
                "utterance {} alone needs {estimated_minutes:.1} minutes, above the {cap_minutes} minute cap",
                utterances[lo].utterance_id
            ));
        }
        let ordinal = out.value.len();
        out.value.push(AnnotationTask {
            task_id: AnnotationTask::id_for(episode_id, ordinal),
            episode_id: episode_id.clone(),
            utterance_range: base + lo..base + hi,
            estimated_minutes,
            assignees: Vec::new(),
        });
        lo = hi;
    }
    Ok(out)
}

/// A claim on a task and the annotator's most recent activity on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClaimActivity {
    pub annotator_id: AnnotatorId,
    pub claimed_at: DateTime<Utc>,
    pub last_submission: Option<DateTime<Utc>>,
    pub completed: bool,
}

/// Assignees whose claim has been idle longer than [`STALE_CLAIM_HOURS`] without finishing.
pub fn stale_assignees(claims: &[ClaimActivity], now: DateTime<Utc>) -> Vec<AnnotatorId> {
    let limit = Duration::hours(STALE_CLAIM_HOURS);
    claims
        .iter()
        .filter(|c| !c.completed)
        .filter(|c| {
            let last = c.last_submission.map_or(c.claimed_at, |s| s.max(c.claimed_at));
            now - last > limit
        })
        .map(|c| c.annotator_id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub document_id: String,
    pub url: String,
    pub snippet: String,
    pub relevance: Relevance,
    pub doc_stance: DocStance,
}

/// A fact-check submission for a retained check-worthy utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactCheckPayload {
    pub queries: Vec<String>,
    #[serde(default)]
    pub evidence: Vec<Evidence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

impl FactCheckPayload {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.queries.is_empty() {
            return Err(ValidationError::new("queries", "at least one search query is required"));
        }
        if self.queries.iter().any(|q| q.trim().is_empty()) {
            return Err(ValidationError::new("queries", "queries must be non-empty"));
        }
        if self.evidence.iter().any(|e| e.snippet.trim().is_empty()) {
            return Err(ValidationError::new("evidence", "evidence snippets must be non-empty"));
        }
        if self.verdict.is_some() && !self.evidence.iter().any(|e| e.relevance == Relevance::Relevant) {
            return Err(ValidationError::new("verdict", "a verdict needs at least one relevant document"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactCheck {
    pub factcheck_id: FactCheckId,
    pub utterance_id: UtteranceId,
    pub annotator_id: AnnotatorId,
    pub queries: Vec<String>,
    pub evidence: Vec<Evidence>,
    pub verdict: Option<Verdict>,
}

impl FactCheck {
    /// Empty draft for an eligible utterance.
    pub fn open(
        factcheck_id: FactCheckId,
        label: &AggregatedLabel,
        annotator_id: AnnotatorId,
    ) -> Result<Self, WorkflowError> {
        if !label.is_retained_check_worthy() {
            return Err(WorkflowError::NotEligible(label.utterance_id.clone()));
        }
        Ok(Self {
            factcheck_id,
            utterance_id: label.utterance_id.clone(),
            annotator_id,
            queries: Vec::new(),
            evidence: Vec::new(),
            verdict: None,
        })
    }

    pub fn fill(mut self, payload: FactCheckPayload) -> Result<Self, ValidationError> {
        payload.validate()?;
        self.queries = payload.queries;
        self.evidence = payload.evidence;
        self.verdict = payload.verdict;
        Ok(self)
    }
}

/// Counts of each value, in enum order.
pub fn histogram<T: Ord + Copy>(values: impl IntoIterator<Item = T>) -> BTreeMap<T, usize> {
    let mut out = BTreeMap::new();
    for v in values {
        *out.entry(v).or_default() += 1;
    }
    out
}
