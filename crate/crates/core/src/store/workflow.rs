//! Task claiming, annotation submission, aggregation and fact-checks.

use chrono::{DateTime, Utc};
use rusqlite::{params, Connection, OptionalExtension, Row, Transaction};

use super::{
    load_utterance, not_found, parse_col, parse_opt, parse_time, require, time_text, Result, Store,
    StoreError,
};
use crate::annotation::{
    self, AggregatedLabel, AggregationStatus, Annotation, AnnotationPayload, AnnotationTask,
    ClaimActivity, ClaimSpan, CheckworthyLabel, Evidence, FactCheck, FactCheckPayload,
    TranscriptionCorrection, WorkflowError,
};
use crate::ids::{AnnotationId, AnnotatorId, EpisodeId, FactCheckId, TaskId, UtteranceId};
use crate::Checked;

impl Store {
    /// Splits the episode's utterances into microtasks and stores them.
    pub fn create_tasks(&self, episode_id: &EpisodeId, cap_minutes: f64) -> Result<Checked<Vec<AnnotationTask>>> {
        let utterances = self.utterances(episode_id)?;
        self.write(|tx| {
            require(tx, "episode", "episodes", "episode_id", episode_id.as_str())?;
            let existing: i64 = tx.query_row(
                "SELECT COUNT(*) FROM tasks WHERE episode_id = ?1",
                [episode_id.as_str()],
                |r| r.get(0),
            )?;
            if existing > 0 {
                return Err(StoreError::Conflict(format!("episode {episode_id} already has tasks")));
            }
            let tasks = annotation::create_microtasks(episode_id, &utterances, cap_minutes)?;
            for t in &tasks.value {
                insert_task(tx, t)?;
            }
            Ok(tasks)
        })
    }

    pub fn task(&self, task_id: &TaskId) -> Result<AnnotationTask> {
        load_task(&self.conn(), task_id)
    }

    pub fn tasks(&self, episode_id: &EpisodeId) -> Result<Vec<AnnotationTask>> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT task_id FROM tasks WHERE episode_id = ?1 ORDER BY range_start")?;
        let ids = stmt
            .query_map([episode_id.as_str()], |r| Ok(TaskId::new(r.get::<_, String>(0)?)))?
            .collect::<rusqlite::Result<Vec<_>>>()?;
        ids.iter().map(|id| load_task(&conn, id)).collect()
    }

    /// Adds the annotator to the task. Claims idle for too long are released first.
    pub fn claim_task(&self, task_id: &TaskId, annotator: &AnnotatorId, now: DateTime<Utc>) -> Result<AnnotationTask> {
        self.write(|tx| {
            release_stale(tx, task_id, now)?;
            let mut task = load_task(tx, task_id)?;
            task.claim(annotator)?;
            tx.execute(
                "INSERT INTO task_assignees (task_id, annotator_id, claimed_at) VALUES (?1, ?2, ?3)",
                params![task_id.as_str(), annotator.as_str(), time_text(now)],
            )?;
            Ok(task)
        })
    }

    /// Releases every stale claim on the task and returns the released annotators.
    pub fn release_stale_claims(&self, task_id: &TaskId, now: DateTime<Utc>) -> Result<Vec<AnnotatorId>> {
        self.write(|tx| release_stale(tx, task_id, now))
    }

    /// Validates and stores one annotation. A resubmission for the same
    /// utterance replaces the annotator's previous record.
    pub fn submit_annotation(
        &self,
        task_id: &TaskId,
        annotator: &AnnotatorId,
        payload: AnnotationPayload,
        now: DateTime<Utc>,
    ) -> Result<Annotation> {
        self.write(|tx| {
            let task = load_task(tx, task_id)?;
            if !task.is_assigned(annotator) {
                return Err(WorkflowError::NotAssigned {
                    task: task_id.clone(),
                    annotator: annotator.clone(),
                }
                .into());
            }
            let utterance = load_utterance(tx, &payload.utterance_id)?;
            if utterance.episode_id != task.episode_id || !task.contains(utterance.index) {
                return Err(WorkflowError::Validation(annotation::ValidationError {
                    field: "utterance_id",
                    message: format!("utterance {} is outside task {task_id}", utterance.utterance_id),
                })
                .into());
            }
            payload.validate(&utterance.text).map_err(WorkflowError::from)?;

            let record = Annotation::from_payload(
                AnnotationId::new(uuid::Uuid::new_v4().to_string()),
                task_id.clone(),
                annotator.clone(),
                payload,
                now,
            );
            let before = load_aggregate(tx, &record.utterance_id)?;
            tx.execute(
                "UPDATE annotations SET deleted_at = ?3
                 WHERE utterance_id = ?1 AND annotator_id = ?2 AND deleted_at IS NULL",
                params![record.utterance_id.as_str(), annotator.as_str(), time_text(now)],
            )?;
            insert_annotation(tx, &record)?;
            let after = refresh_aggregate(tx, &record.utterance_id)?;
            guard_factchecked(tx, &before, &after)?;
            Ok(record)
        })
    }

    /// Soft-deletes an annotation and re-aggregates its utterance.
    pub fn delete_annotation(&self, annotation_id: &AnnotationId, now: DateTime<Utc>) -> Result<()> {
        self.write(|tx| {
            let utterance: String = tx
                .query_row(
                    "SELECT utterance_id FROM annotations WHERE annotation_id = ?1 AND deleted_at IS NULL",
                    [annotation_id.as_str()],
                    |r| r.get(0),
                )
                .optional()?
                .ok_or_else(|| not_found("annotation", annotation_id))?;
            let utterance = UtteranceId::new(utterance);
            let before = load_aggregate(tx, &utterance)?;
            tx.execute(
                "UPDATE annotations SET deleted_at = ?2 WHERE annotation_id = ?1",
                params![annotation_id.as_str(), time_text(now)],
            )?;
            let after = refresh_aggregate(tx, &utterance)?;
            guard_factchecked(tx, &before, &after)
        })
    }

    /// Live annotations of one utterance, in submission order.
    pub fn annotations(&self, utterance_id: &UtteranceId) -> Result<Vec<Annotation>> {
        live_annotations(&self.conn(), utterance_id)
    }

    /// The materialized aggregate; utterances without annotations are pending.
    pub fn aggregate(&self, utterance_id: &UtteranceId) -> Result<AggregatedLabel> {
        let conn = self.conn();
        load_utterance(&conn, utterance_id)?;
        load_aggregate(&conn, utterance_id)
    }

    /// An empty fact-check draft; only retained check-worthy utterances qualify.
    pub fn open_factcheck(&self, utterance_id: &UtteranceId, annotator: &AnnotatorId) -> Result<FactCheck> {
        let label = self.aggregate(utterance_id)?;
        Ok(FactCheck::open(
            FactCheckId::new(uuid::Uuid::new_v4().to_string()),
            &label,
            annotator.clone(),
        )?)
    }

    /// Stores a fact-check, replacing the annotator's earlier one for the utterance.
    pub fn submit_factcheck(
        &self,
        utterance_id: &UtteranceId,
        annotator: &AnnotatorId,
        payload: FactCheckPayload,
        now: DateTime<Utc>,
    ) -> Result<FactCheck> {
        self.write(|tx| {
            load_utterance(tx, utterance_id)?;
            let label = load_aggregate(tx, utterance_id)?;
            let draft = FactCheck::open(
                FactCheckId::new(uuid::Uuid::new_v4().to_string()),
                &label,
                annotator.clone(),
            )?;
            let factcheck = draft.fill(payload).map_err(WorkflowError::from)?;
            tx.execute(
                "DELETE FROM factchecks WHERE utterance_id = ?1 AND annotator_id = ?2",
                params![utterance_id.as_str(), annotator.as_str()],
            )?;
            insert_factcheck(tx, &factcheck, now)?;
            Ok(factcheck)
        })
    }

    pub fn factchecks(&self, utterance_id: &UtteranceId) -> Result<Vec<FactCheck>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT factcheck_id FROM factchecks WHERE utterance_id = ?1 ORDER BY submitted_at, factcheck_id",
        )?;
        let ids = stmt
            .query_map([utterance_id.as_str()], |r| Ok(FactCheckId::new(r.get::<_, String>(0)?)))?
            .collect::<rusqlite::Result<Vec<_>>>()?;
        ids.iter().map(|id| load_factcheck(&conn, id)).collect()
    }
}

pub(super) fn insert_task(tx: &Transaction<'_>, t: &AnnotationTask) -> Result<()> {
    tx.execute(
        "INSERT INTO tasks (task_id, episode_id, range_start, range_end, estimated_minutes)
         VALUES (?1, ?2, ?3, ?4, ?5)",
        params![
            t.task_id.as_str(),
            t.episode_id.as_str(),
            t.utterance_range.start as i64,
            t.utterance_range.end as i64,
            t.estimated_minutes,
        ],
    )?;
    let now = time_text(Utc::now());
    for a in &t.assignees {
        tx.execute(
            "INSERT INTO task_assignees (task_id, annotator_id, claimed_at) VALUES (?1, ?2, ?3)",
            params![t.task_id.as_str(), a.as_str(), now],
        )?;
    }
    Ok(())
}

pub(super) fn load_task(conn: &Connection, task_id: &TaskId) -> Result<AnnotationTask> {
    let mut task = conn
        .query_row(
            "SELECT episode_id, range_start, range_end, estimated_minutes FROM tasks WHERE task_id = ?1",
            [task_id.as_str()],
            |r| {
                Ok(AnnotationTask {
                    task_id: task_id.clone(),
                    episode_id: EpisodeId::new(r.get::<_, String>(0)?),
                    utterance_range: r.get::<_, i64>(1)? as usize..r.get::<_, i64>(2)? as usize,
                    estimated_minutes: r.get(3)?,
                    assignees: Vec::new(),
                })
            },
        )
        .optional()?
        .ok_or_else(|| not_found("task", task_id))?;
    let mut stmt = conn.prepare(
        "SELECT annotator_id FROM task_assignees WHERE task_id = ?1 ORDER BY claimed_at, rowid",
    )?;
    task.assignees = stmt
        .query_map([task_id.as_str()], |r| Ok(AnnotatorId::new(r.get::<_, String>(0)?)))?
        .collect::<rusqlite::Result<_>>()?;
    Ok(task)
}

fn release_stale(tx: &Transaction<'_>, task_id: &TaskId, now: DateTime<Utc>) -> Result<Vec<AnnotatorId>> {
    let task = load_task(tx, task_id)?;
    let size = task.utterance_range.len() as i64;
    let mut claims = Vec::new();
    {
        let mut stmt = tx.prepare(
            "SELECT a.annotator_id, a.claimed_at,
                    (SELECT MAX(submitted_at) FROM annotations n
                      WHERE n.task_id = a.task_id AND n.annotator_id = a.annotator_id AND n.deleted_at IS NULL),
                    (SELECT COUNT(*) FROM annotations n
                      WHERE n.task_id = a.task_id AND n.annotator_id = a.annotator_id AND n.deleted_at IS NULL)
             FROM task_assignees a WHERE a.task_id = ?1",
        )?;
        let rows = stmt.query_map([task_id.as_str()], |r| {
            Ok((
                r.get::<_, String>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, Option<String>>(2)?,
                r.get::<_, i64>(3)?,
            ))
        })?;
        for row in rows {
            let (annotator, claimed_at, last, done) = row?;
            claims.push(ClaimActivity {
                annotator_id: AnnotatorId::new(annotator),
                claimed_at: parse_time(&claimed_at).map_err(StoreError::Corrupt)?,
                last_submission: last.as_deref().map(parse_time).transpose().map_err(StoreError::Corrupt)?,
                completed: done >= size,
            });
        }
    }
    let stale = annotation::stale_assignees(&claims, now);
    for annotator in &stale {
        tracing::info!(task = %task_id, annotator = %annotator, "releasing stale claim");
        let touched: Vec<String> = {
            let mut stmt = tx.prepare(
                "SELECT utterance_id FROM annotations
                 WHERE task_id = ?1 AND annotator_id = ?2 AND deleted_at IS NULL",
            )?;
            let rows = stmt.query_map(params![task_id.as_str(), annotator.as_str()], |r| r.get(0))?;
            rows.collect::<rusqlite::Result<_>>()?
        };
        tx.execute(
            "UPDATE annotations SET deleted_at = ?3
             WHERE task_id = ?1 AND annotator_id = ?2 AND deleted_at IS NULL",
            params![task_id.as_str(), annotator.as_str(), time_text(now)],
        )?;
        tx.execute(
            "DELETE FROM task_assignees WHERE task_id = ?1 AND annotator_id = ?2",
            params![task_id.as_str(), annotator.as_str()],
        )?;
        for u in touched {
            refresh_aggregate(tx, &UtteranceId::new(u))?;
        }
    }
    Ok(stale)
}

pub(super) fn insert_annotation(tx: &Transaction<'_>, a: &Annotation) -> Result<()> {
    let motivations = serde_json::to_string(&a.motivations).map_err(|e| StoreError::Corrupt(e.to_string()))?;
    let result = tx.execute(
        "INSERT INTO annotations (annotation_id, task_id, utterance_id, annotator_id, label, claim_type, reason,
             motivations, span_start, span_end, corrected_text, submitted_at)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12)",
        params![
            a.annotation_id.as_str(),
            a.task_id.as_str(),
            a.utterance_id.as_str(),
            a.annotator_id.as_str(),
            a.label.as_str(),
            a.claim_type.map(|c| c.as_str()),
            a.reason.map(|r| r.as_str()),
            motivations,
            a.span.as_ref().map(|s| s.char_start as i64),
            a.span.as_ref().map(|s| s.char_end as i64),
            a.correction.as_ref().map(|c| c.corrected_text.as_str()),
            time_text(a.submitted_at),
        ],
    );
    match result {
        Err(rusqlite::Error::SqliteFailure(e, msg)) if e.code == rusqlite::ErrorCode::ConstraintViolation => {
            Err(StoreError::Conflict(format!(
                "annotation {} violates a stored invariant: {}",
                a.annotation_id,
                msg.unwrap_or_default()
            )))
        }
        other => {
            other?;
            Ok(())
        }
    }
}

pub(super) const ANNOTATION_COLUMNS: &str = "n.annotation_id, n.task_id, n.utterance_id, n.annotator_id, n.label, \
     n.claim_type, n.reason, n.motivations, n.span_start, n.span_end, n.corrected_text, n.submitted_at";

pub(super) fn annotation_from_row(r: &Row<'_>) -> rusqlite::Result<Annotation> {
    let utterance_id = UtteranceId::new(r.get::<_, String>(2)?);
    let motivations: String = r.get(7)?;
    let span_start: Option<i64> = r.get(8)?;
    let span_end: Option<i64> = r.get(9)?;
    let corrected: Option<String> = r.get(10)?;
    let submitted: String = r.get(11)?;
    Ok(Annotation {
        annotation_id: AnnotationId::new(r.get::<_, String>(0)?),
        task_id: TaskId::new(r.get::<_, String>(1)?),
        annotator_id: AnnotatorId::new(r.get::<_, String>(3)?),
        label: parse_col(r, 4, |s| s.parse::<CheckworthyLabel>().ok())?,
        claim_type: parse_opt(r, 5)?,
        reason: parse_opt(r, 6)?,
        motivations: serde_json::from_str(&motivations)
            .map_err(|e| super::conversion_error(7, e.to_string()))?,
        span: span_start.zip(span_end).map(|(s, e)| ClaimSpan {
            utterance_id: utterance_id.clone(),
            char_start: s as usize,
            char_end: e as usize,
        }),
        correction: corrected.map(|corrected_text| TranscriptionCorrection {
            utterance_id: utterance_id.clone(),
            corrected_text,
        }),
        submitted_at: parse_time(&submitted).map_err(|e| super::conversion_error(11, e))?,
        utterance_id,
    })
}

fn live_annotations(conn: &Connection, utterance_id: &UtteranceId) -> Result<Vec<Annotation>> {
    let mut stmt = conn.prepare(&format!(
        "SELECT {ANNOTATION_COLUMNS} FROM annotations n
         WHERE n.utterance_id = ?1 AND n.deleted_at IS NULL ORDER BY n.submitted_at, n.annotation_id"
    ))?;
    let rows = stmt.query_map([utterance_id.as_str()], annotation_from_row)?;
    Ok(rows.collect::<rusqlite::Result<_>>()?)
}

fn load_aggregate(conn: &Connection, utterance_id: &UtteranceId) -> Result<AggregatedLabel> {
    let stored = conn
        .query_row(
            "SELECT status, label, claim_type, reason, motivations FROM aggregated_labels WHERE utterance_id = ?1",
            [utterance_id.as_str()],
            |r| {
                let motivations: String = r.get(4)?;
                Ok(AggregatedLabel {
                    utterance_id: utterance_id.clone(),
                    status: parse_col(r, 0, |s| s.parse::<AggregationStatus>().ok())?,
                    label: parse_opt(r, 1)?,
                    claim_type: parse_opt(r, 2)?,
                    reason: parse_opt(r, 3)?,
                    motivations: serde_json::from_str(&motivations)
                        .map_err(|e| super::conversion_error(4, e.to_string()))?,
                })
            },
        )
        .optional()?;
    Ok(stored.unwrap_or_else(|| annotation::aggregate(utterance_id, &[])))
}

/// Recomputes and stores the aggregate from the live annotations.
pub(super) fn refresh_aggregate(tx: &Transaction<'_>, utterance_id: &UtteranceId) -> Result<AggregatedLabel> {
    let live = live_annotations(tx, utterance_id)?;
    let label = annotation::aggregate(utterance_id, &live);
    write_aggregate(tx, &label)?;
    Ok(label)
}

pub(super) fn write_aggregate(tx: &Transaction<'_>, label: &AggregatedLabel) -> Result<()> {
    let motivations = serde_json::to_string(&label.motivations).map_err(|e| StoreError::Corrupt(e.to_string()))?;
    tx.execute(
        "INSERT INTO aggregated_labels (utterance_id, status, label, claim_type, reason, motivations)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6)
         ON CONFLICT (utterance_id) DO UPDATE SET status = excluded.status, label = excluded.label,
             claim_type = excluded.claim_type, reason = excluded.reason, motivations = excluded.motivations",
        params![
            label.utterance_id.as_str(),
            label.status.as_str(),
            label.label.map(|l| l.as_str()),
            label.claim_type.map(|c| c.as_str()),
            label.reason.map(|r| r.as_str()),
            motivations,
        ],
    )?;
    Ok(())
}

/// Refuses changes that would strand fact-checks on a no-longer-eligible utterance.
fn guard_factchecked(tx: &Transaction<'_>, before: &AggregatedLabel, after: &AggregatedLabel) -> Result<()> {
    if !before.is_retained_check_worthy() || after.is_retained_check_worthy() {
        return Ok(());
    }
    let n: i64 = tx.query_row(
        "SELECT COUNT(*) FROM factchecks WHERE utterance_id = ?1",
        [after.utterance_id.as_str()],
        |r| r.get(0),
    )?;
    if n > 0 {
        return Err(StoreError::Conflict(format!(
            "utterance {} has {n} fact-check(s) and must stay check-worthy",
            after.utterance_id
        )));
    }
    Ok(())
}

pub(super) fn insert_factcheck(tx: &Transaction<'_>, f: &FactCheck, now: DateTime<Utc>) -> Result<()> {
    let label = load_aggregate(tx, &f.utterance_id)?;
    if !label.is_retained_check_worthy() {
        return Err(WorkflowError::NotEligible(f.utterance_id.clone()).into());
    }
    let queries = serde_json::to_string(&f.queries).map_err(|e| StoreError::Corrupt(e.to_string()))?;
    tx.execute(
        "INSERT INTO factchecks (factcheck_id, utterance_id, annotator_id, queries, verdict, submitted_at)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
        params![
            f.factcheck_id.as_str(),
            f.utterance_id.as_str(),
            f.annotator_id.as_str(),
            queries,
            f.verdict.map(|v| v.as_str()),
            time_text(now),
        ],
    )?;
    let mut stmt = tx.prepare(
        "INSERT INTO factcheck_evidence (factcheck_id, seq, document_id, url, snippet, relevance, doc_stance)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
    )?;
    for (i, e) in f.evidence.iter().enumerate() {
        stmt.execute(params![
            f.factcheck_id.as_str(),
            i as i64,
            e.document_id,
            e.url,
            e.snippet,
            e.relevance.as_str(),
            e.doc_stance.as_str(),
        ])?;
    }
    Ok(())
}

pub(super) fn load_factcheck(conn: &Connection, factcheck_id: &FactCheckId) -> Result<FactCheck> {
    let mut f = conn
        .query_row(
            "SELECT utterance_id, annotator_id, queries, verdict FROM factchecks WHERE factcheck_id = ?1",
            [factcheck_id.as_str()],
            |r| {
                let queries: String = r.get(2)?;
                Ok(FactCheck {
                    factcheck_id: factcheck_id.clone(),
                    utterance_id: UtteranceId::new(r.get::<_, String>(0)?),
                    annotator_id: AnnotatorId::new(r.get::<_, String>(1)?),
                    queries: serde_json::from_str(&queries).map_err(|e| super::conversion_error(2, e.to_string()))?,
                    evidence: Vec::new(),
                    verdict: parse_opt(r, 3)?,
                })
            },
        )
        .optional()?
        .ok_or_else(|| not_found("fact-check", factcheck_id))?;
    let mut stmt = conn.prepare(
        "SELECT document_id, url, snippet, relevance, doc_stance FROM factcheck_evidence
         WHERE factcheck_id = ?1 ORDER BY seq",
    )?;
    f.evidence = stmt
        .query_map([factcheck_id.as_str()], |r| {
            Ok(Evidence {
                document_id: r.get(0)?,
                url: r.get(1)?,
                snippet: r.get(2)?,
                relevance: parse_col(r, 3, |s| s.parse().ok())?,
                doc_stance: parse_col(r, 4, |s| s.parse().ok())?,
            })
        })?
        .collect::<rusqlite::Result<_>>()?;
    Ok(f)
}
