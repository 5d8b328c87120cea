//! Migration ledger. Each entry is applied once, in order, inside a transaction.

pub(super) const MIGRATIONS: &[(i64, &str, &str)] = &[(1, "initial hierarchy", INITIAL)];

/// Tables in parent-before-child order; dumps and loads follow it.
pub(super) const TABLES: &[&str] = &[
    "podcasts",
    "episodes",
    "audio_assets",
    "transcripts",
    "words",
    "diarization_segments",
    "utterances",
    "tasks",
    "task_assignees",
    "annotations",
    "aggregated_labels",
    "factchecks",
    "factcheck_evidence",
];

const INITIAL: &str = r#"
CREATE TABLE podcasts (
    podcast_id  TEXT PRIMARY KEY,
    title       TEXT NOT NULL,
    category    TEXT NOT NULL CHECK (category IN ('NEWS_AND_POLITICS', 'HEALTH_AND_WELLNESS', 'OTHER')),
    language    TEXT NOT NULL
);

CREATE TABLE episodes (
    episode_id       TEXT PRIMARY KEY,
    podcast_id       TEXT NOT NULL REFERENCES podcasts(podcast_id) ON DELETE CASCADE,
    guid             TEXT NOT NULL CHECK (guid <> ''),
    title            TEXT NOT NULL,
    publication_date TEXT,
    audio_url        TEXT NOT NULL,
    media_type       TEXT,
    duration_s       REAL CHECK (duration_s IS NULL OR duration_s >= 0),
    UNIQUE (podcast_id, guid)
);

CREATE TABLE audio_assets (
    episode_id   TEXT PRIMARY KEY REFERENCES episodes(episode_id) ON DELETE CASCADE,
    local_path   TEXT NOT NULL,
    content_hash TEXT NOT NULL,
    byte_length  INTEGER NOT NULL CHECK (byte_length > 0),
    media_type   TEXT NOT NULL
);

CREATE TABLE transcripts (
    episode_id TEXT PRIMARY KEY REFERENCES episodes(episode_id) ON DELETE CASCADE,
    language   TEXT NOT NULL
);

CREATE TABLE words (
    episode_id TEXT NOT NULL REFERENCES transcripts(episode_id) ON DELETE CASCADE,
    word_index INTEGER NOT NULL,
    text       TEXT NOT NULL CHECK (text <> ''),
    start_s    REAL NOT NULL CHECK (start_s >= 0),
    end_s      REAL NOT NULL CHECK (end_s >= start_s),
    confidence REAL NOT NULL CHECK (confidence BETWEEN 0 AND 1),
    speaker_id TEXT,
    PRIMARY KEY (episode_id, word_index)
);

CREATE TABLE diarization_segments (
    episode_id TEXT NOT NULL REFERENCES transcripts(episode_id) ON DELETE CASCADE,
    seq        INTEGER NOT NULL,
    speaker_id TEXT NOT NULL CHECK (speaker_id <> ''),
    start_s    REAL NOT NULL,
    end_s      REAL NOT NULL CHECK (end_s > start_s),
    PRIMARY KEY (episode_id, seq)
);

CREATE TABLE utterances (
    utterance_id    TEXT PRIMARY KEY,
    episode_id      TEXT NOT NULL REFERENCES episodes(episode_id) ON DELETE CASCADE,
    utterance_index INTEGER NOT NULL,
    text            TEXT NOT NULL CHECK (text <> ''),
    resolved_text   TEXT CHECK (resolved_text IS NULL OR resolved_text <> ''),
    start_s         REAL NOT NULL,
    end_s           REAL NOT NULL CHECK (end_s >= start_s),
    speaker_id      TEXT NOT NULL,
    mean_confidence REAL NOT NULL CHECK (mean_confidence BETWEEN 0 AND 1),
    first_word      INTEGER NOT NULL,
    word_count      INTEGER NOT NULL CHECK (word_count > 0),
    UNIQUE (episode_id, utterance_index)
);

CREATE TABLE tasks (
    task_id           TEXT PRIMARY KEY,
    episode_id        TEXT NOT NULL REFERENCES episodes(episode_id) ON DELETE CASCADE,
    range_start       INTEGER NOT NULL,
    range_end         INTEGER NOT NULL CHECK (range_end > range_start),
    estimated_minutes REAL NOT NULL
);

CREATE TABLE task_assignees (
    task_id      TEXT NOT NULL REFERENCES tasks(task_id) ON DELETE CASCADE,
    annotator_id TEXT NOT NULL,
    claimed_at   TEXT NOT NULL,
    PRIMARY KEY (task_id, annotator_id)
);

-- Span offsets are Unicode codepoints. Rows are soft-deleted to keep the audit trail.
CREATE TABLE annotations (
    annotation_id  TEXT PRIMARY KEY,
    task_id        TEXT NOT NULL REFERENCES tasks(task_id) ON DELETE CASCADE,
    utterance_id   TEXT NOT NULL REFERENCES utterances(utterance_id) ON DELETE CASCADE,
    annotator_id   TEXT NOT NULL,
    label          TEXT NOT NULL,
    claim_type     TEXT,
    reason         TEXT,
    motivations    TEXT NOT NULL DEFAULT '[]',
    span_start     INTEGER,
    span_end       INTEGER,
    corrected_text TEXT,
    submitted_at   TEXT NOT NULL,
    deleted_at     TEXT,
    CHECK ((label = 'CHECK_WORTHY' AND claim_type IS NOT NULL AND reason IS NULL)
        OR (label = 'NOT_CHECK_WORTHY' AND reason IS NOT NULL AND claim_type IS NULL
            AND motivations = '[]' AND span_start IS NULL)),
    CHECK ((span_start IS NULL) = (span_end IS NULL)),
    CHECK (span_start IS NULL OR (span_start >= 0 AND span_start < span_end))
);
CREATE UNIQUE INDEX annotations_live ON annotations(utterance_id, annotator_id) WHERE deleted_at IS NULL;
CREATE INDEX annotations_task ON annotations(task_id);

CREATE TABLE aggregated_labels (
    utterance_id TEXT PRIMARY KEY REFERENCES utterances(utterance_id) ON DELETE CASCADE,
    status       TEXT NOT NULL CHECK (status IN ('PENDING', 'RETAINED', 'DISCARDED')),
    label        TEXT,
    claim_type   TEXT,
    reason       TEXT,
    motivations  TEXT NOT NULL DEFAULT '[]',
    CHECK ((status = 'RETAINED') = (label IS NOT NULL))
);

CREATE TABLE factchecks (
    factcheck_id TEXT PRIMARY KEY,
    utterance_id TEXT NOT NULL REFERENCES utterances(utterance_id) ON DELETE CASCADE,
    annotator_id TEXT NOT NULL,
    queries      TEXT NOT NULL,
    verdict      TEXT CHECK (verdict IS NULL OR verdict IN ('SUPPORTS', 'REFUTES')),
    submitted_at TEXT NOT NULL
);

CREATE TABLE factcheck_evidence (
    factcheck_id TEXT NOT NULL REFERENCES factchecks(factcheck_id) ON DELETE CASCADE,
    seq          INTEGER NOT NULL,
    document_id  TEXT NOT NULL,
    url          TEXT NOT NULL,
    snippet      TEXT NOT NULL,
    relevance    TEXT NOT NULL CHECK (relevance IN ('RELEVANT', 'NOT_RELEVANT')),
    doc_stance   TEXT NOT NULL CHECK (doc_stance IN ('SUPPORTS', 'REFUTES', 'NEUTRAL')),
    PRIMARY KEY (factcheck_id, seq)
);
"#;
