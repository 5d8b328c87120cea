//! Read side: filtered record queries, progress and summaries.

use rusqlite::types::Value as SqlValue;
use rusqlite::{params, params_from_iter, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};

use super::workflow::{annotation_from_row, load_factcheck, ANNOTATION_COLUMNS};
use super::{not_found, parse_col, parse_opt, utterance_from_row, Result, Store, StoreError, UTTERANCE_COLUMNS};
use crate::annotation::{
    AggregatedLabel, AggregationStatus, Annotation, CheckworthyLabel, ClaimType, FactCheck, QUORUM,
};
use crate::feed::Category;
use crate::ids::{AnnotatorId, EpisodeId, PodcastId, TaskId};
use crate::segment::Utterance;

/// Conjunction of equality constraints. Unset fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFilter {
    pub podcast_id: Option<PodcastId>,
    pub episode_id: Option<EpisodeId>,
    pub topic: Option<Category>,
    pub label: Option<CheckworthyLabel>,
    pub claim_type: Option<ClaimType>,
    pub status: Option<AggregationStatus>,
    pub speaker_id: Option<String>,
    pub language: Option<String>,
}

pub const FILTER_FIELDS: [&str; 8] = [
    "podcast_id",
    "episode_id",
    "topic",
    "label",
    "claim_type",
    "status",
    "speaker_id",
    "language",
];

fn lenient<T: Copy>(all: &[T], wire: impl Fn(T) -> &'static str, raw: &str) -> Option<T> {
    let squash = |s: &str| {
        s.chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect::<String>()
    };
    let want = squash(raw);
    all.iter().copied().find(|v| squash(wire(*v)) == want)
}

impl QueryFilter {
    /// Builds a filter from `key=value` pairs, e.g. decoded query-string parameters.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut f = QueryFilter::default();
        let bad = |key: &str, value: &str| StoreError::Query(format!("invalid value {value:?} for {key}"));
        for (key, value) in pairs {
            match key {
                "podcast_id" => f.podcast_id = Some(value.into()),
                "episode_id" => f.episode_id = Some(value.into()),
                "topic" => {
                    f.topic = Some(lenient(&Category::ALL, Category::as_str, value).ok_or_else(|| bad(key, value))?)
                }
                "label" => {
                    f.label = Some(
                        lenient(CheckworthyLabel::ALL, CheckworthyLabel::as_str, value).ok_or_else(|| bad(key, value))?,
                    )
                }
                "claim_type" => {
                    f.claim_type =
                        Some(lenient(ClaimType::ALL, ClaimType::as_str, value).ok_or_else(|| bad(key, value))?)
                }
                "status" => {
                    f.status = Some(
                        lenient(AggregationStatus::ALL, AggregationStatus::as_str, value)
                            .ok_or_else(|| bad(key, value))?,
                    )
                }
                "speaker_id" => f.speaker_id = Some(value.to_owned()),
                "language" => f.language = Some(value.to_owned()),
                other => {
                    return Err(StoreError::Query(format!(
                        "unknown filter field {other:?}; expected one of {}",
                        FILTER_FIELDS.join(", ")
                    )))
                }
            }
        }
        Ok(f)
    }

    /// WHERE clause over the aliases used by both record queries.
    /// `label_col` / `type_col` choose whose label the constraint applies to.
    fn clause(&self, label_col: &str, type_col: &str) -> (String, Vec<SqlValue>) {
        let mut terms = Vec::new();
        let mut values = Vec::new();
        let mut eq = |column: &str, value: Option<String>| {
            if let Some(v) = value {
                values.push(SqlValue::Text(v));
                terms.push(format!("{column} = ?{}", values.len()));
            }
        };
        eq("e.podcast_id", self.podcast_id.as_ref().map(ToString::to_string));
        eq("u.episode_id", self.episode_id.as_ref().map(ToString::to_string));
        eq("p.category", self.topic.map(|c| c.as_str().to_owned()));
        eq(label_col, self.label.map(|l| l.as_str().to_owned()));
        eq(type_col, self.claim_type.map(|c| c.as_str().to_owned()));
        eq("COALESCE(g.status, 'PENDING')", self.status.map(|s| s.as_str().to_owned()));
        eq("u.speaker_id", self.speaker_id.clone());
        eq("COALESCE(t.language, p.language)", self.language.clone());
        let sql = if terms.is_empty() {
            String::new()
        } else {
            format!("WHERE {}", terms.join(" AND "))
        };
        (sql, values)
    }
}

const HIERARCHY_JOIN: &str = "FROM utterances u
     JOIN episodes e ON e.episode_id = u.episode_id
     JOIN podcasts p ON p.podcast_id = e.podcast_id
     LEFT JOIN transcripts t ON t.episode_id = u.episode_id
     LEFT JOIN aggregated_labels g ON g.utterance_id = u.utterance_id";

/// One utterance with its place in the hierarchy and its aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utterance: Utterance,
    pub podcast_id: PodcastId,
    pub topic: Category,
    pub language: String,
    pub aggregate: AggregatedLabel,
    pub annotation_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotation: Annotation,
    pub episode_id: EpisodeId,
    pub podcast_id: PodcastId,
    pub topic: Category,
    pub speaker_id: String,
    pub status: AggregationStatus,
}

/// A fact-check joined with the text of the claim it verifies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactCheckRecord {
    pub factcheck: FactCheck,
    pub claim: String,
    pub episode_id: EpisodeId,
    pub topic: Category,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodcastSummary {
    pub podcast_id: PodcastId,
    pub title: String,
    pub category: Category,
    pub language: String,
    pub episode_count: usize,
    pub progress: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProgress {
    pub task_id: TaskId,
    pub utterance_range: std::ops::Range<usize>,
    pub assignees: Vec<AnnotatorId>,
    /// `submissions[k]` = utterances in the task with exactly k live annotations.
    pub submissions: [usize; QUORUM + 1],
}

impl Store {
    /// Utterances matching the filter, ordered by (episode, utterance index).
    /// `label` and `claim_type` constrain the aggregated label.
    pub fn query(&self, filter: &QueryFilter) -> Result<Vec<UtteranceRecord>> {
        let conn = self.conn();
        let (clause, values) = filter.clause("g.label", "g.claim_type");
        let sql = format!(
            "SELECT {UTTERANCE_COLUMNS}, e.podcast_id, p.category, COALESCE(t.language, p.language),
                    COALESCE(g.status, 'PENDING'), g.label, g.claim_type, g.reason, COALESCE(g.motivations, '[]'),
                    (SELECT COUNT(*) FROM annotations n WHERE n.utterance_id = u.utterance_id AND n.deleted_at IS NULL)
             {HIERARCHY_JOIN} {clause}
             ORDER BY u.episode_id, u.utterance_index"
        );
        let mut stmt = conn.prepare(&sql)?;
        let rows = stmt.query_map(params_from_iter(values), |r| {
            let utterance = utterance_from_row(r)?;
            let motivations: String = r.get(18)?;
            Ok(UtteranceRecord {
                podcast_id: PodcastId::new(r.get::<_, String>(11)?),
                topic: parse_col(r, 12, Category::parse)?,
                language: r.get(13)?,
                aggregate: AggregatedLabel {
                    utterance_id: utterance.utterance_id.clone(),
                    status: parse_col(r, 14, |s| s.parse().ok())?,
                    label: parse_opt(r, 15)?,
                    claim_type: parse_opt(r, 16)?,
                    reason: parse_opt(r, 17)?,
                    motivations: serde_json::from_str(&motivations)
                        .map_err(|e| super::conversion_error(18, e.to_string()))?,
                },
                annotation_count: r.get::<_, i64>(19)? as usize,
                utterance,
            })
        })?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    /// Live annotations matching the filter, ordered by (episode, utterance index, submission).
    /// `label` and `claim_type` constrain the annotation itself.
    pub fn query_annotations(&self, filter: &QueryFilter) -> Result<Vec<AnnotationRecord>> {
        let conn = self.conn();
        let (clause, values) = filter.clause("n.label", "n.claim_type");
        let clause = if clause.is_empty() {
            "WHERE n.deleted_at IS NULL".to_owned()
        } else {
            format!("{clause} AND n.deleted_at IS NULL")
        };
        let sql = format!(
            "SELECT {ANNOTATION_COLUMNS}, u.episode_id, e.podcast_id, p.category, u.speaker_id,
                    COALESCE(g.status, 'PENDING')
             {HIERARCHY_JOIN}
             JOIN annotations n ON n.utterance_id = u.utterance_id
             {clause}
             ORDER BY u.episode_id, u.utterance_index, n.submitted_at, n.annotation_id"
        );
        let mut stmt = conn.prepare(&sql)?;
        let rows = stmt.query_map(params_from_iter(values), |r| {
            Ok(AnnotationRecord {
                annotation: annotation_from_row(r)?,
                episode_id: EpisodeId::new(r.get::<_, String>(12)?),
                podcast_id: PodcastId::new(r.get::<_, String>(13)?),
                topic: parse_col(r, 14, Category::parse)?,
                speaker_id: r.get(15)?,
                status: parse_col(r, 16, |s| s.parse().ok())?,
            })
        })?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    /// Fact-checks on utterances matching the filter.
    pub fn factcheck_records(&self, filter: &QueryFilter) -> Result<Vec<FactCheckRecord>> {
        let conn = self.conn();
        let (clause, values) = filter.clause("g.label", "g.claim_type");
        let sql = format!(
            "SELECT f.factcheck_id, COALESCE(u.resolved_text, u.text), u.episode_id, p.category
             {HIERARCHY_JOIN}
             JOIN factchecks f ON f.utterance_id = u.utterance_id
             {clause}
             ORDER BY u.episode_id, u.utterance_index, f.submitted_at, f.factcheck_id"
        );
        let mut stmt = conn.prepare(&sql)?;
        let heads = stmt
            .query_map(params_from_iter(values), |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, String>(1)?,
                    EpisodeId::new(r.get::<_, String>(2)?),
                    parse_col(r, 3, Category::parse)?,
                ))
            })?
            .collect::<rusqlite::Result<Vec<_>>>()?;
        heads
            .into_iter()
            .map(|(id, claim, episode_id, topic)| {
                Ok(FactCheckRecord {
                    factcheck: load_factcheck(&conn, &id.into())?,
                    claim,
                    episode_id,
                    topic,
                })
            })
            .collect()
    }

    /// Fraction of the episode's utterances with a full quorum of live annotations.
    pub fn progress(&self, episode_id: &EpisodeId) -> Result<f64> {
        let conn = self.conn();
        episode_progress(&conn, episode_id)
    }

    pub fn task_progress(&self, episode_id: &EpisodeId) -> Result<Vec<TaskProgress>> {
        let tasks = self.tasks(episode_id)?;
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT MIN((SELECT COUNT(*) FROM annotations n
                         WHERE n.utterance_id = u.utterance_id AND n.deleted_at IS NULL), ?4), COUNT(*)
             FROM utterances u
             WHERE u.episode_id = ?1 AND u.utterance_index >= ?2 AND u.utterance_index < ?3
             GROUP BY 1",
        )?;
        tasks
            .into_iter()
            .map(|t| {
                let mut submissions = [0usize; QUORUM + 1];
                let rows = stmt.query_map(
                    params![
                        episode_id.as_str(),
                        t.utterance_range.start as i64,
                        t.utterance_range.end as i64,
                        QUORUM as i64
                    ],
                    |r| Ok((r.get::<_, i64>(0)? as usize, r.get::<_, i64>(1)? as usize)),
                )?;
                for row in rows {
                    let (k, n) = row?;
                    submissions[k] += n;
                }
                Ok(TaskProgress {
                    task_id: t.task_id,
                    utterance_range: t.utterance_range,
                    assignees: t.assignees,
                    submissions,
                })
            })
            .collect()
    }

    /// Podcasts ordered by title, then id.
    pub fn list_podcasts(&self, offset: usize, limit: usize) -> Result<Vec<PodcastSummary>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT p.podcast_id, p.title, p.category, p.language,
                    (SELECT COUNT(*) FROM episodes e WHERE e.podcast_id = p.podcast_id),
                    (SELECT COUNT(*) FROM utterances u JOIN episodes e ON e.episode_id = u.episode_id
                      WHERE e.podcast_id = p.podcast_id),
                    (SELECT COUNT(*) FROM utterances u JOIN episodes e ON e.episode_id = u.episode_id
                      WHERE e.podcast_id = p.podcast_id AND
                        (SELECT COUNT(*) FROM annotations n
                          WHERE n.utterance_id = u.utterance_id AND n.deleted_at IS NULL) >= ?3)
             FROM podcasts p ORDER BY p.title, p.podcast_id LIMIT ?1 OFFSET ?2",
        )?;
        let limit = i64::try_from(limit).unwrap_or(i64::MAX);
        let rows = stmt.query_map(params![limit, offset as i64, QUORUM as i64], |r| {
            let total: i64 = r.get(5)?;
            let done: i64 = r.get(6)?;
            Ok(PodcastSummary {
                podcast_id: PodcastId::new(r.get::<_, String>(0)?),
                title: r.get(1)?,
                category: parse_col(r, 2, Category::parse)?,
                language: r.get(3)?,
                episode_count: r.get::<_, i64>(4)? as usize,
                progress: if total == 0 { 0.0 } else { done as f64 / total as f64 },
            })
        })?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }
}

fn episode_progress(conn: &Connection, episode_id: &EpisodeId) -> Result<f64> {
    let known = conn
        .query_row("SELECT 1 FROM episodes WHERE episode_id = ?1", [episode_id.as_str()], |_| Ok(()))
        .optional()?;
    if known.is_none() {
        return Err(not_found("episode", episode_id));
    }
    let (total, done): (i64, i64) = conn.query_row(
        "SELECT COUNT(*),
                COALESCE(SUM((SELECT COUNT(*) FROM annotations n
                               WHERE n.utterance_id = u.utterance_id AND n.deleted_at IS NULL) >= ?2), 0)
         FROM utterances u WHERE u.episode_id = ?1",
        params![episode_id.as_str(), QUORUM as i64],
        |r| Ok((r.get(0)?, r.get(1)?)),
    )?;
    Ok(if total == 0 { 0.0 } else { done as f64 / total as f64 })
}
