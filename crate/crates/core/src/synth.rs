//! Deterministic synthetic data: random transcripts for property tests and
//! benchmarks, and a fully annotated reference corpus built through the store.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{
    AnnotationPayload, ClaimType, DocStance, Evidence, FactCheckPayload, Motivation,
    NotCheckableReason, Relevance, Verdict, DEFAULT_CAP_MINUTES,
};
use crate::feed::{Category, Episode, PodcastFeed};
use crate::ids::{AnnotatorId, EpisodeId, PodcastId};
use crate::segment::{split_sentences, Utterance};
use crate::store::{Store, StoreError};
use crate::transcript::{Transcript, Word};

/// Descriptor of the bundled reference corpus.
pub const REFERENCE_CORPUS: &str = include_str!("../fixtures/reference_corpus.json");

const VOCABULARY: &[&str] = &[
    "the", "budget", "vaccine", "minister", "said", "percent", "of", "people", "in", "Oslo", "we", "think",
    "really", "and", "a", "study", "shows", "that", "sleep", "matters", "Mr.", "Dr.", "J.", "e.g.", "etc.",
    "Tromsø", "Straße", "über", "it's", "\"quote\"",
];

const TERMINALS: &[&str] = &[".", "?", "!", ".\"", "?)"];

/// A transcript of `n_words` random tokens with non-decreasing timestamps,
/// a mix of sentence terminals and abbreviations, and runs of speakers.
pub fn random_transcript(seed: u64, n_words: usize) -> Transcript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speakers = ["S1", "S2", "S3"];
    let mut words = Vec::with_capacity(n_words);
    let mut speaker_of = Vec::with_capacity(n_words);
    let mut t = 0.0f64;
    let mut speaker = speakers[0];
    for _ in 0..n_words {
        let mut text = VOCABULARY[rng.random_range(0..VOCABULARY.len())].to_owned();
        if rng.random_bool(0.15) {
            text.push_str(TERMINALS[rng.random_range(0..TERMINALS.len())]);
        }
        if rng.random_bool(0.05) {
            speaker = speakers[rng.random_range(0..speakers.len())];
        }
        // Occasional zero gaps and zero-length words.
        let gap = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..0.3) };
        let len = if rng.random_bool(0.05) { 0.0 } else { rng.random_range(0.05..0.8) };
        let start = t + gap;
        words.push(Word {
            text,
            start_s: round_ms(start),
            end_s: round_ms(start + len),
            confidence: round_ms(rng.random_range(0.0..=1.0)),
        });
        speaker_of.push(speaker.to_owned());
        t = start;
    }
    Transcript {
        episode_id: EpisodeId::new(format!("synthetic-{seed}")),
        language: "en".into(),
        words,
        speaker_of,
    }
}

fn round_ms(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Builds a transcript whose words spell out `sentences` back to back.
pub fn transcript_from_sentences(episode_id: &EpisodeId, sentences: &[String], speakers: &[&str]) -> Transcript {
    let mut words = Vec::new();
    let mut speaker_of = Vec::new();
    let mut t = 0.0;
    for (i, s) in sentences.iter().enumerate() {
        let speaker = speakers[i % speakers.len().max(1)];
        for w in s.split_whitespace() {
            words.push(Word {
                text: w.to_owned(),
                start_s: round_ms(t),
                end_s: round_ms(t + 0.3),
                confidence: 0.9,
            });
            speaker_of.push(speaker.to_owned());
            t += 0.35;
        }
        t += 0.5;
    }
    Transcript {
        episode_id: episode_id.clone(),
        language: "en".into(),
        words,
        speaker_of,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodePlan {
    pub key: String,
    pub title: String,
    pub topic: Category,
    pub language: String,
    pub utterances: usize,
    pub positive: usize,
    pub supports: usize,
    pub refutes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDescriptor {
    pub seed: u64,
    pub annotators: Vec<AnnotatorId>,
    pub episodes: Vec<EpisodePlan>,
    pub claim_types: BTreeMap<ClaimType, usize>,
    pub motivations: BTreeMap<Motivation, usize>,
    /// Unanimous reasons; any remaining negatives get split reasons.
    pub not_checkable_reasons: BTreeMap<NotCheckableReason, usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("bad corpus descriptor: {0}")]
    Descriptor(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Segment(#[from] crate::segment::SegmentError),
}

impl CorpusDescriptor {
    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let d: Self = serde_json::from_str(text).map_err(|e| CorpusError::Descriptor(e.to_string()))?;
        d.check()?;
        Ok(d)
    }

    pub fn reference() -> Self {
        Self::from_json(REFERENCE_CORPUS).expect("bundled descriptor is valid")
    }

    pub fn total_utterances(&self) -> usize {
        self.episodes.iter().map(|e| e.utterances).sum()
    }

    pub fn total_positive(&self) -> usize {
        self.episodes.iter().map(|e| e.positive).sum()
    }

    fn check(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::Descriptor(m));
        if self.annotators.len() != crate::annotation::QUORUM {
            return bad(format!("need {} annotators", crate::annotation::QUORUM));
        }
        let positive = self.total_positive();
        let negative = self.total_utterances() - positive;
        if self.claim_types.values().sum::<usize>() != positive {
            return bad("claim type counts must sum to the positive count".into());
        }
        if self.motivations.values().sum::<usize>() > positive {
            return bad("at most one motivation per positive is scripted".into());
        }
        if self.not_checkable_reasons.values().sum::<usize>() > negative {
            return bad("more unanimous reasons than negatives".into());
        }
        for e in &self.episodes {
            if e.positive > e.utterances || e.utterances == 0 {
                return bad(format!("episode {}: bad utterance counts", e.key));
            }
            if e.positive == 0 && e.supports + e.refutes > 0 {
                return bad(format!("episode {}: evidence without claims", e.key));
            }
        }
        Ok(())
    }
}

/// What was built, keyed by descriptor episode key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSummary {
    pub episodes: BTreeMap<String, EpisodeId>,
    pub positives: usize,
    pub factchecks: usize,
}

fn expand<T: Copy>(counts: &BTreeMap<T, usize>) -> Vec<T> {
    counts.iter().flat_map(|(v, n)| std::iter::repeat(*v).take(*n)).collect()
}

/// Evenly spread `k` positions among `n`.
fn spread(n: usize, k: usize) -> Vec<bool> {
    (0..n).map(|i| (i + 1) * k / n > i * k / n).collect()
}

fn claim_sentence(t: ClaimType, i: usize) -> String {
    match t {
        ClaimType::NumericalClaim => format!("Unemployment in district {i} rose by {} percent last year.", i % 17 + 2),
        ClaimType::FactualDescription => format!("The bridge on route {i} was opened by the transport ministry."),
        ClaimType::CauseAndEffect => format!("Cutting the fuel tax in county {i} raised hospital waiting times."),
        ClaimType::Quotation => format!("The mayor of town {i} said that the budget was balanced."),
    }
}

fn negative_sentence(r: Option<NotCheckableReason>, i: usize) -> String {
    match r {
        Some(NotCheckableReason::NonFactualStatement) | None => format!("Well, where were we with point {i}?"),
        Some(NotCheckableReason::BroadcastDetails) => format!("Welcome back to segment {i} of the show."),
        Some(NotCheckableReason::EmotionsAndOpinions) => format!("Honestly I find topic {i} very frustrating."),
        Some(NotCheckableReason::PersonalExperience) => format!("I went running on morning {i} with my dog."),
        Some(NotCheckableReason::Prediction) => format!("Prices will probably fall around week {i} next year."),
    }
}

enum Plan {
    Positive { claim_type: ClaimType, motivation: Option<Motivation>, motivated: usize },
    Negative { reason: Option<NotCheckableReason> },
}

/// Builds the corpus in `store`: one podcast per episode, transcripts,
/// utterances, microtasks, three annotators' submissions and fact-checks.
pub fn build_corpus(store: &Store, d: &CorpusDescriptor) -> Result<CorpusSummary, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
    let mut claim_types = expand(&d.claim_types);
    claim_types.shuffle(&mut rng);
    let mut motivations: Vec<Option<Motivation>> = expand(&d.motivations).into_iter().map(Some).collect();
    motivations.resize(claim_types.len().max(motivations.len()), None);
    motivations.shuffle(&mut rng);
    let mut reasons: Vec<Option<NotCheckableReason>> = expand(&d.not_checkable_reasons).into_iter().map(Some).collect();
    let negatives = d.total_utterances() - d.total_positive();
    reasons.resize(negatives, None);
    reasons.shuffle(&mut rng);

    let base: DateTime<Utc> = Utc.with_ymd_and_hms(2024, 1, 1, 9, 0, 0).single().expect("valid date");
    let mut summary = CorpusSummary {
        episodes: BTreeMap::new(),
        positives: 0,
        factchecks: 0,
    };
    let (mut next_pos, mut next_neg) = (0, 0);
    for (e_idx, plan) in d.episodes.iter().enumerate() {
        let podcast_id = PodcastId::new(format!("pod-{}", plan.key.to_lowercase()));
        let episode_id = EpisodeId::new(format!("ep-{}", plan.key.to_lowercase()));
        let feed = PodcastFeed {
            podcast_id: podcast_id.clone(),
            title: plan.title.clone(),
            category: plan.topic,
            language: plan.language.clone(),
            episodes: vec![Episode {
                episode_id: episode_id.clone(),
                guid: format!("{}-1", plan.key),
                title: format!("{} episode 1", plan.title),
                publication_date: Some(base - Duration::days(e_idx as i64)),
                audio_url: format!("https://media.example.org/{}.mp3", plan.key)
                    .parse()
                    .expect("static url"),
                media_type: Some("audio/mpeg".into()),
                duration_s: None,
            }],
        };
        store.upsert_feed(&feed)?;

        let mut plans = Vec::with_capacity(plan.utterances);
        for positive in spread(plan.utterances, plan.positive) {
            if positive {
                plans.push(Plan::Positive {
                    claim_type: claim_types[next_pos],
                    motivation: motivations[next_pos],
                    motivated: next_pos % d.annotators.len(),
                });
                next_pos += 1;
            } else {
                plans.push(Plan::Negative { reason: reasons[next_neg] });
                next_neg += 1;
            }
        }
        let sentences: Vec<String> = plans
            .iter()
            .enumerate()
            .map(|(i, p)| match p {
                Plan::Positive { claim_type, .. } => claim_sentence(*claim_type, e_idx * 1000 + i),
                Plan::Negative { reason } => negative_sentence(*reason, e_idx * 1000 + i),
            })
            .collect();
        let transcript = transcript_from_sentences(&episode_id, &sentences, &["HOST", "GUEST"]);
        store.put_transcript(&transcript, &[])?;
        let utterances = split_sentences(&transcript)?;
        if utterances.len() != plan.utterances {
            return Err(CorpusError::Descriptor(format!(
                "episode {} segmented into {} utterances, expected {}",
                plan.key,
                utterances.len(),
                plan.utterances
            )));
        }
        store.replace_utterances(&episode_id, &utterances)?;

        let tasks = store.create_tasks(&episode_id, DEFAULT_CAP_MINUTES)?.into_value();
        for task in &tasks {
            for (k, annotator) in d.annotators.iter().enumerate() {
                let now = base + Duration::minutes(k as i64);
                store.claim_task(&task.task_id, annotator, now)?;
                for u in &utterances[task.utterance_range.clone()] {
                    let payload = scripted_payload(u, &plans[u.index], k);
                    store.submit_annotation(&task.task_id, annotator, payload, now)?;
                }
            }
        }

        summary.factchecks += add_factchecks(store, d, plan, &utterances, &plans, base)?;
        summary.positives += plan.positive;
        summary.episodes.insert(plan.key.clone(), episode_id);
    }
    Ok(summary)
}

fn scripted_payload(u: &Utterance, plan: &Plan, annotator: usize) -> AnnotationPayload {
    match plan {
        Plan::Positive { claim_type, motivation, motivated } => {
            let p = AnnotationPayload::check_worthy(u.utterance_id.clone(), *claim_type);
            match motivation {
                Some(m) if *motivated == annotator => p.with_motivations([*m]),
                _ => p,
            }
        }
        Plan::Negative { reason: Some(r) } => AnnotationPayload::not_check_worthy(u.utterance_id.clone(), *r),
        Plan::Negative { reason: None } => {
            const SPLIT: [NotCheckableReason; 3] = [
                NotCheckableReason::NonFactualStatement,
                NotCheckableReason::EmotionsAndOpinions,
                NotCheckableReason::Prediction,
            ];
            AnnotationPayload::not_check_worthy(u.utterance_id.clone(), SPLIT[annotator % SPLIT.len()])
        }
    }
}

/// Evidence documents are dealt round-robin over the episode's claims; every
/// fact-check also carries one irrelevant document. Returns the fact-check count.
fn add_factchecks(
    store: &Store,
    d: &CorpusDescriptor,
    plan: &EpisodePlan,
    utterances: &[Utterance],
    plans: &[Plan],
    base: DateTime<Utc>,
) -> Result<usize, CorpusError> {
    let claims: Vec<&Utterance> = utterances
        .iter()
        .filter(|u| matches!(plans[u.index], Plan::Positive { .. }))
        .collect();
    if claims.is_empty() {
        return Ok(0);
    }
    let mut docs: Vec<Vec<DocStance>> = vec![Vec::new(); claims.len()];
    let stances = std::iter::repeat(DocStance::Supports)
        .take(plan.supports)
        .chain(std::iter::repeat(DocStance::Refutes).take(plan.refutes));
    for (j, s) in stances.enumerate() {
        docs[j % claims.len()].push(s);
    }
    let checker = &d.annotators[0];
    for (c, (u, stances)) in claims.iter().zip(&docs).enumerate() {
        let mut evidence: Vec<Evidence> = stances
            .iter()
            .enumerate()
            .map(|(k, s)| Evidence {
                document_id: format!("{}-doc{k}", u.utterance_id),
                url: format!("https://news.example.org/{}/{k}", plan.key.to_lowercase()),
                snippet: format!(
                    "Report {c}.{k} {} the statement about item {}.",
                    if *s == DocStance::Supports { "confirms" } else { "contradicts" },
                    u.index
                ),
                relevance: Relevance::Relevant,
                doc_stance: *s,
            })
            .collect();
        evidence.push(Evidence {
            document_id: format!("{}-offtopic", u.utterance_id),
            url: "https://news.example.org/unrelated".into(),
            snippet: "An unrelated article about the weather.".into(),
            relevance: Relevance::NotRelevant,
            doc_stance: DocStance::Neutral,
        });
        let supports = stances.iter().filter(|s| **s == DocStance::Supports).count();
        let verdict = if stances.is_empty() {
            None
        } else if supports * 2 >= stances.len() {
            Some(Verdict::Supports)
        } else {
            Some(Verdict::Refutes)
        };
        let payload = FactCheckPayload {
            queries: vec![u.text.trim_end_matches('.').to_owned()],
            evidence,
            verdict,
        };
        store.submit_factcheck(&u.utterance_id, checker, payload, base + Duration::hours(1))?;
    }
    Ok(claims.len())
}
