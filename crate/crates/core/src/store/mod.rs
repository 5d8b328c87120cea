//! Embedded relational storage: podcasts → episodes → utterances → annotations.
//!
//! One SQLite connection behind a mutex acts as the single writer; every
//! mutation runs in its own transaction, so per-task operations are
//! linearizable and reads observe committed snapshots.

mod dump;
mod query;
mod schema;
mod workflow;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, MutexGuard};
use rusqlite::{params, Connection, OptionalExtension, Row, Transaction};
use serde::{Deserialize, Serialize};

use crate::annotation::{Annotation, AnnotationTask, FactCheck, WorkflowError};
use crate::feed::{AudioAsset, Category, Episode, PodcastFeed};
use crate::ids::{EpisodeId, PodcastId, UtteranceId};
use crate::segment::Utterance;
use crate::transcript::{DiarizationSegment, Transcript, Word};

pub use query::{
    AnnotationRecord, FactCheckRecord, PodcastSummary, QueryFilter, TaskProgress, UtteranceRecord, FILTER_FIELDS,
};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("database error: {0}")]
    Sql(#[from] rusqlite::Error),
    #[error("integrity error: missing {parent} {id:?}")]
    Integrity { parent: &'static str, id: String },
    #[error("{kind} {id:?} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("query error: {0}")]
    Query(String),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("corrupt row: {0}")]
    Corrupt(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Where a store lives and which migration it is at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreHandle {
    pub location: String,
    pub schema_version: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PodcastRecord {
    pub podcast_id: PodcastId,
    pub title: String,
    pub category: Category,
    pub language: String,
}

impl From<&PodcastFeed> for PodcastRecord {
    fn from(feed: &PodcastFeed) -> Self {
        Self {
            podcast_id: feed.podcast_id.clone(),
            title: feed.title.clone(),
            category: feed.category,
            language: feed.language.clone(),
        }
    }
}

/// Anything that can be written into the hierarchy.
#[derive(Debug, Clone, Copy)]
pub enum Entity<'a> {
    Podcast(&'a PodcastRecord),
    Episode {
        podcast_id: &'a PodcastId,
        episode: &'a Episode,
    },
    AudioAsset(&'a AudioAsset),
    Utterance(&'a Utterance),
    Task(&'a AnnotationTask),
    Annotation(&'a Annotation),
    FactCheck(&'a FactCheck),
}

pub struct Store {
    conn: Mutex<Connection>,
    location: PathBuf,
}

impl Store {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "NORMAL")?;
        Self::init(conn, path.to_path_buf())
    }

    pub fn open_in_memory() -> Result<Self> {
        Self::init(Connection::open_in_memory()?, PathBuf::from(":memory:"))
    }

    fn init(mut conn: Connection, location: PathBuf) -> Result<Self> {
        conn.pragma_update(None, "foreign_keys", true)?;
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        migrate(&mut conn)?;
        Ok(Self {
            conn: Mutex::new(conn),
            location,
        })
    }

    pub fn handle(&self) -> Result<StoreHandle> {
        let conn = self.conn();
        Ok(StoreHandle {
            location: self.location.display().to_string(),
            schema_version: schema_version(&conn)?,
        })
    }

    fn conn(&self) -> MutexGuard<'_, Connection> {
        self.conn.lock()
    }

    fn write<T>(&self, f: impl FnOnce(&Transaction<'_>) -> Result<T>) -> Result<T> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let out = f(&tx)?;
        tx.commit()?;
        Ok(out)
    }

    /// Stores one entity after checking that its parent chain exists.
    pub fn persist(&self, entity: Entity<'_>) -> Result<String> {
        self.write(|tx| persist_in(tx, entity))
    }

    /// Inserts or updates the podcast and all of its episodes.
    pub fn upsert_feed(&self, feed: &PodcastFeed) -> Result<()> {
        self.write(|tx| {
            persist_in(tx, Entity::Podcast(&PodcastRecord::from(feed)))?;
            for episode in &feed.episodes {
                persist_in(
                    tx,
                    Entity::Episode {
                        podcast_id: &feed.podcast_id,
                        episode,
                    },
                )?;
            }
            Ok(())
        })
    }

    /// Replaces the stored words and diarization for an episode's transcript.
    pub fn put_transcript(&self, transcript: &Transcript, segments: &[DiarizationSegment]) -> Result<()> {
        self.write(|tx| {
            require(tx, "episode", "episodes", "episode_id", transcript.episode_id.as_str())?;
            tx.execute("DELETE FROM transcripts WHERE episode_id = ?1", [transcript.episode_id.as_str()])?;
            tx.execute(
                "INSERT INTO transcripts (episode_id, language) VALUES (?1, ?2)",
                params![transcript.episode_id.as_str(), transcript.language],
            )?;
            let mut insert = tx.prepare(
                "INSERT INTO words (episode_id, word_index, text, start_s, end_s, confidence, speaker_id)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
            )?;
            for (i, w) in transcript.words.iter().enumerate() {
                insert.execute(params![
                    transcript.episode_id.as_str(),
                    i as i64,
                    w.text,
                    w.start_s,
                    w.end_s,
                    w.confidence,
                    transcript.speaker_of.get(i),
                ])?;
            }
            let mut insert = tx.prepare(
                "INSERT INTO diarization_segments (episode_id, seq, speaker_id, start_s, end_s)
                 VALUES (?1, ?2, ?3, ?4, ?5)",
            )?;
            for (i, s) in segments.iter().enumerate() {
                insert.execute(params![transcript.episode_id.as_str(), i as i64, s.speaker_id, s.start_s, s.end_s])?;
            }
            Ok(())
        })
    }

    pub fn transcript(&self, episode_id: &EpisodeId) -> Result<Transcript> {
        let conn = self.conn();
        let language: String = conn
            .query_row(
                "SELECT language FROM transcripts WHERE episode_id = ?1",
                [episode_id.as_str()],
                |r| r.get(0),
            )
            .optional()?
            .ok_or_else(|| not_found("transcript", episode_id))?;
        let mut stmt = conn.prepare(
            "SELECT text, start_s, end_s, confidence, speaker_id FROM words
             WHERE episode_id = ?1 ORDER BY word_index",
        )?;
        let mut words = Vec::new();
        let mut speakers = Vec::new();
        let rows = stmt.query_map([episode_id.as_str()], |r| {
            Ok((
                Word {
                    text: r.get(0)?,
                    start_s: r.get(1)?,
                    end_s: r.get(2)?,
                    confidence: r.get(3)?,
                },
                r.get::<_, Option<String>>(4)?,
            ))
        })?;
        for row in rows {
            let (w, s) = row?;
            words.push(w);
            speakers.push(s);
        }
        let speaker_of = if speakers.iter().all(Option::is_some) {
            speakers.into_iter().flatten().collect()
        } else {
            Vec::new()
        };
        Ok(Transcript {
            episode_id: episode_id.clone(),
            language,
            words,
            speaker_of,
        })
    }

    pub fn words(&self, episode_id: &EpisodeId, range: std::ops::Range<usize>) -> Result<Vec<(Word, Option<String>)>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT text, start_s, end_s, confidence, speaker_id FROM words
             WHERE episode_id = ?1 AND word_index >= ?2 AND word_index < ?3 ORDER BY word_index",
        )?;
        let rows = stmt.query_map(params![episode_id.as_str(), range.start as i64, range.end as i64], |r| {
            Ok((
                Word {
                    text: r.get(0)?,
                    start_s: r.get(1)?,
                    end_s: r.get(2)?,
                    confidence: r.get(3)?,
                },
                r.get(4)?,
            ))
        })?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    /// Replaces an episode's utterances. Refused once annotation work exists.
    pub fn replace_utterances(&self, episode_id: &EpisodeId, utterances: &[Utterance]) -> Result<()> {
        self.write(|tx| {
            require(tx, "episode", "episodes", "episode_id", episode_id.as_str())?;
            let tasks: i64 = tx.query_row(
                "SELECT COUNT(*) FROM tasks WHERE episode_id = ?1",
                [episode_id.as_str()],
                |r| r.get(0),
            )?;
            if tasks > 0 {
                return Err(StoreError::Conflict(format!(
                    "episode {episode_id} already has annotation tasks; refusing to re-segment"
                )));
            }
            tx.execute("DELETE FROM utterances WHERE episode_id = ?1", [episode_id.as_str()])?;
            for u in utterances {
                if &u.episode_id != episode_id {
                    return Err(StoreError::Conflict(format!(
                        "utterance {} belongs to {}",
                        u.utterance_id, u.episode_id
                    )));
                }
                persist_in(tx, Entity::Utterance(u))?;
            }
            Ok(())
        })
    }

    pub fn utterances(&self, episode_id: &EpisodeId) -> Result<Vec<Utterance>> {
        self.utterance_page(episode_id, 0, usize::MAX)
    }

    pub fn utterance_page(&self, episode_id: &EpisodeId, offset: usize, limit: usize) -> Result<Vec<Utterance>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(&format!(
            "SELECT {UTTERANCE_COLUMNS} FROM utterances u WHERE episode_id = ?1
             ORDER BY utterance_index LIMIT ?2 OFFSET ?3"
        ))?;
        let limit = i64::try_from(limit).unwrap_or(i64::MAX);
        let rows = stmt.query_map(params![episode_id.as_str(), limit, offset as i64], utterance_from_row)?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    pub fn utterance_count(&self, episode_id: &EpisodeId) -> Result<usize> {
        let conn = self.conn();
        let n: i64 = conn.query_row(
            "SELECT COUNT(*) FROM utterances WHERE episode_id = ?1",
            [episode_id.as_str()],
            |r| r.get(0),
        )?;
        Ok(n as usize)
    }

    pub fn utterance(&self, utterance_id: &UtteranceId) -> Result<Utterance> {
        let conn = self.conn();
        load_utterance(&conn, utterance_id)
    }

    pub fn podcast(&self, podcast_id: &PodcastId) -> Result<PodcastRecord> {
        let conn = self.conn();
        conn.query_row(
            "SELECT podcast_id, title, category, language FROM podcasts WHERE podcast_id = ?1",
            [podcast_id.as_str()],
            |r| {
                Ok(PodcastRecord {
                    podcast_id: PodcastId::new(r.get::<_, String>(0)?),
                    title: r.get(1)?,
                    category: parse_col(r, 2, Category::parse)?,
                    language: r.get(3)?,
                })
            },
        )
        .optional()?
        .ok_or_else(|| not_found("podcast", podcast_id))
    }

    /// The episode and the podcast it belongs to.
    pub fn episode(&self, episode_id: &EpisodeId) -> Result<(PodcastId, Episode)> {
        let conn = self.conn();
        conn.query_row(
            "SELECT podcast_id, episode_id, guid, title, publication_date, audio_url, media_type, duration_s
             FROM episodes WHERE episode_id = ?1",
            [episode_id.as_str()],
            |r| {
                let url: String = r.get(5)?;
                Ok((
                    PodcastId::new(r.get::<_, String>(0)?),
                    Episode {
                        episode_id: EpisodeId::new(r.get::<_, String>(1)?),
                        guid: r.get(2)?,
                        title: r.get(3)?,
                        publication_date: r
                            .get::<_, Option<String>>(4)?
                            .map(|s| parse_time(&s))
                            .transpose()
                            .map_err(|e| conversion_error(4, e))?,
                        audio_url: url.parse().map_err(|e: url::ParseError| conversion_error(5, e.to_string()))?,
                        media_type: r.get(6)?,
                        duration_s: r.get(7)?,
                    },
                ))
            },
        )
        .optional()?
        .ok_or_else(|| not_found("episode", episode_id))
    }

    pub fn episodes(&self, podcast_id: &PodcastId) -> Result<Vec<EpisodeId>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT episode_id FROM episodes WHERE podcast_id = ?1
             ORDER BY publication_date IS NULL, publication_date DESC, episode_id",
        )?;
        let rows = stmt.query_map([podcast_id.as_str()], |r| Ok(EpisodeId::new(r.get::<_, String>(0)?)))?;
        Ok(rows.collect::<rusqlite::Result<_>>()?)
    }

    pub fn audio_asset(&self, episode_id: &EpisodeId) -> Result<AudioAsset> {
        let conn = self.conn();
        conn.query_row(
            "SELECT episode_id, local_path, content_hash, byte_length, media_type FROM audio_assets WHERE episode_id = ?1",
            [episode_id.as_str()],
            |r| {
                Ok(AudioAsset {
                    episode_id: EpisodeId::new(r.get::<_, String>(0)?),
                    local_path: PathBuf::from(r.get::<_, String>(1)?),
                    content_hash: r.get(2)?,
                    byte_length: r.get::<_, i64>(3)? as u64,
                    media_type: r.get(4)?,
                })
            },
        )
        .optional()?
        .ok_or_else(|| not_found("audio asset", episode_id))
    }

    /// Hard delete; words, utterances, tasks, annotations and fact-checks go with it.
    pub fn delete_episode(&self, episode_id: &EpisodeId) -> Result<()> {
        self.write(|tx| {
            let n = tx.execute("DELETE FROM episodes WHERE episode_id = ?1", [episode_id.as_str()])?;
            if n == 0 {
                return Err(not_found("episode", episode_id));
            }
            Ok(())
        })
    }

    /// Row count per table, for diagnostics and tests.
    pub fn table_counts(&self) -> Result<Vec<(&'static str, i64)>> {
        let conn = self.conn();
        schema::TABLES
            .iter()
            .map(|t| Ok((*t, conn.query_row(&format!("SELECT COUNT(*) FROM {t}"), [], |r| r.get(0))?)))
            .collect()
    }
}

fn migrate(conn: &mut Connection) -> Result<()> {
    conn.execute_batch(
        "CREATE TABLE IF NOT EXISTS schema_migrations (
            version    INTEGER PRIMARY KEY,
            name       TEXT NOT NULL,
            applied_at TEXT NOT NULL
        )",
    )?;
    let current = schema_version(conn)?;
    for (version, name, sql) in schema::MIGRATIONS {
        if *version <= current {
            continue;
        }
        let tx = conn.transaction()?;
        tx.execute_batch(sql)?;
        tx.execute(
            "INSERT INTO schema_migrations (version, name, applied_at) VALUES (?1, ?2, ?3)",
            params![version, name, Utc::now().to_rfc3339()],
        )?;
        tx.commit()?;
    }
    Ok(())
}

fn schema_version(conn: &Connection) -> Result<i64> {
    Ok(conn.query_row("SELECT COALESCE(MAX(version), 0) FROM schema_migrations", [], |r| r.get(0))?)
}

pub(crate) const UTTERANCE_COLUMNS: &str = "u.utterance_id, u.episode_id, u.utterance_index, u.text, u.resolved_text, \
     u.start_s, u.end_s, u.speaker_id, u.mean_confidence, u.first_word, u.word_count";

pub(crate) fn utterance_from_row(r: &Row<'_>) -> rusqlite::Result<Utterance> {
    Ok(Utterance {
        utterance_id: UtteranceId::new(r.get::<_, String>(0)?),
        episode_id: EpisodeId::new(r.get::<_, String>(1)?),
        index: r.get::<_, i64>(2)? as usize,
        text: r.get(3)?,
        resolved_text: r.get(4)?,
        start_s: r.get(5)?,
        end_s: r.get(6)?,
        speaker_id: r.get(7)?,
        mean_confidence: r.get(8)?,
        first_word: r.get::<_, i64>(9)? as usize,
        word_count: r.get::<_, i64>(10)? as usize,
    })
}

fn load_utterance(conn: &Connection, utterance_id: &UtteranceId) -> Result<Utterance> {
    conn.query_row(
        &format!("SELECT {UTTERANCE_COLUMNS} FROM utterances u WHERE utterance_id = ?1"),
        [utterance_id.as_str()],
        utterance_from_row,
    )
    .optional()?
    .ok_or_else(|| not_found("utterance", utterance_id))
}

fn not_found(kind: &'static str, id: impl std::fmt::Display) -> StoreError {
    StoreError::NotFound {
        kind,
        id: id.to_string(),
    }
}

fn exists(conn: &Connection, table: &str, column: &str, id: &str) -> Result<bool> {
    Ok(conn
        .query_row(&format!("SELECT 1 FROM {table} WHERE {column} = ?1"), [id], |_| Ok(()))
        .optional()?
        .is_some())
}

fn require(conn: &Connection, parent: &'static str, table: &str, column: &str, id: &str) -> Result<()> {
    if exists(conn, table, column, id)? {
        Ok(())
    } else {
        Err(StoreError::Integrity {
            parent,
            id: id.to_owned(),
        })
    }
}

fn conversion_error(col: usize, message: impl Into<String>) -> rusqlite::Error {
    rusqlite::Error::FromSqlConversionFailure(
        col,
        rusqlite::types::Type::Text,
        message.into().into(),
    )
}

pub(crate) fn parse_col<T>(r: &Row<'_>, col: usize, parse: impl Fn(&str) -> Option<T>) -> rusqlite::Result<T> {
    let raw: String = r.get(col)?;
    parse(&raw).ok_or_else(|| conversion_error(col, format!("unexpected value {raw:?}")))
}

pub(crate) fn parse_opt<T: FromStr>(r: &Row<'_>, col: usize) -> rusqlite::Result<Option<T>> {
    r.get::<_, Option<String>>(col)?
        .map(|raw| raw.parse::<T>().map_err(|_| conversion_error(col, format!("unexpected value {raw:?}"))))
        .transpose()
}

pub(crate) fn parse_time(raw: &str) -> std::result::Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(raw)
        .map(|d| d.with_timezone(&Utc))
        .map_err(|e| format!("bad timestamp {raw:?}: {e}"))
}

pub(crate) fn time_text(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::Micros, true)
}

fn persist_in(tx: &Transaction<'_>, entity: Entity<'_>) -> Result<String> {
    match entity {
        Entity::Podcast(p) => {
            if p.podcast_id.is_empty() {
                return Err(StoreError::Conflict("podcast_id is empty".into()));
            }
            tx.execute(
                "INSERT INTO podcasts (podcast_id, title, category, language) VALUES (?1, ?2, ?3, ?4)
                 ON CONFLICT (podcast_id) DO UPDATE SET title = excluded.title,
                     category = excluded.category, language = excluded.language",
                params![p.podcast_id.as_str(), p.title, p.category.as_str(), p.language],
            )?;
            Ok(p.podcast_id.to_string())
        }
        Entity::Episode { podcast_id, episode: e } => {
            require(tx, "podcast", "podcasts", "podcast_id", podcast_id.as_str())?;
            tx.execute(
                "INSERT INTO episodes (episode_id, podcast_id, guid, title, publication_date, audio_url, media_type, duration_s)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)
                 ON CONFLICT (episode_id) DO UPDATE SET title = excluded.title,
                     publication_date = excluded.publication_date, audio_url = excluded.audio_url,
                     media_type = excluded.media_type, duration_s = excluded.duration_s",
                params![
                    e.episode_id.as_str(),
                    podcast_id.as_str(),
                    e.guid,
                    e.title,
                    e.publication_date.map(time_text),
                    e.audio_url.as_str(),
                    e.media_type,
                    e.duration_s,
                ],
            )?;
            Ok(e.episode_id.to_string())
        }
        Entity::AudioAsset(a) => {
            require(tx, "episode", "episodes", "episode_id", a.episode_id.as_str())?;
            tx.execute(
                "INSERT INTO audio_assets (episode_id, local_path, content_hash, byte_length, media_type)
                 VALUES (?1, ?2, ?3, ?4, ?5)
                 ON CONFLICT (episode_id) DO UPDATE SET local_path = excluded.local_path,
                     content_hash = excluded.content_hash, byte_length = excluded.byte_length,
                     media_type = excluded.media_type",
                params![
                    a.episode_id.as_str(),
                    a.local_path.to_string_lossy(),
                    a.content_hash,
                    a.byte_length as i64,
                    a.media_type,
                ],
            )?;
            Ok(a.content_hash.clone())
        }
        Entity::Utterance(u) => {
            require(tx, "episode", "episodes", "episode_id", u.episode_id.as_str())?;
            tx.execute(
                "INSERT INTO utterances (utterance_id, episode_id, utterance_index, text, resolved_text,
                     start_s, end_s, speaker_id, mean_confidence, first_word, word_count)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11)",
                params![
                    u.utterance_id.as_str(),
                    u.episode_id.as_str(),
                    u.index as i64,
                    u.text,
                    u.resolved_text,
                    u.start_s,
                    u.end_s,
                    u.speaker_id,
                    u.mean_confidence,
                    u.first_word as i64,
                    u.word_count as i64,
                ],
            )?;
            Ok(u.utterance_id.to_string())
        }
        Entity::Task(t) => {
            require(tx, "episode", "episodes", "episode_id", t.episode_id.as_str())?;
            workflow::insert_task(tx, t)?;
            Ok(t.task_id.to_string())
        }
        Entity::Annotation(a) => {
            require(tx, "utterance", "utterances", "utterance_id", a.utterance_id.as_str())?;
            require(tx, "task", "tasks", "task_id", a.task_id.as_str())?;
            workflow::insert_annotation(tx, a)?;
            workflow::refresh_aggregate(tx, &a.utterance_id)?;
            Ok(a.annotation_id.to_string())
        }
        Entity::FactCheck(f) => {
            require(tx, "utterance", "utterances", "utterance_id", f.utterance_id.as_str())?;
            workflow::insert_factcheck(tx, f, Utc::now())?;
            Ok(f.factcheck_id.to_string())
        }
    }
}
