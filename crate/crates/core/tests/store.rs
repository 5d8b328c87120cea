use std::sync::{Arc, Barrier};

use chrono::{DateTime, Duration, TimeZone, Utc};
use podfact_core::annotation::{WorkflowError, QUORUM};
use podfact_core::segment::split_sentences;
use podfact_core::store::{Entity, PodcastRecord, StoreError};
use podfact_core::synth::transcript_from_sentences;
use podfact_core::{
    AggregationStatus, Annotation, AnnotationPayload, AnnotatorId, Category, CheckworthyLabel, ClaimType, DocStance,
    Episode, EpisodeId, Evidence, FactCheckPayload, Motivation, NotCheckableReason, PodcastFeed, PodcastId,
    QueryFilter, Relevance, Store, TaskId, Utterance, Verdict,
};

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap()
}

fn ann(name: &str) -> AnnotatorId {
    AnnotatorId::new(name)
}

/// One podcast with one episode of `n` short utterances, each its own sentence.
fn seed_episode(store: &Store, key: &str, topic: Category, n: usize) -> (EpisodeId, Vec<Utterance>) {
    let podcast_id = PodcastId::new(format!("pod-{key}"));
    let episode_id = EpisodeId::new(format!("ep-{key}"));
    store
        .upsert_feed(&PodcastFeed {
            podcast_id,
            title: format!("Show {key}"),
            category: topic,
            language: "en".into(),
            episodes: vec![Episode {
                episode_id: episode_id.clone(),
                guid: key.into(),
                title: key.into(),
                publication_date: Some(t0()),
                audio_url: format!("https://x.org/{key}.mp3").parse().unwrap(),
                media_type: Some("audio/mpeg".into()),
                duration_s: None,
            }],
        })
        .unwrap();
    let sentences: Vec<String> = (0..n).map(|i| format!("Statement {i} about the harbour budget.")).collect();
    let transcript = transcript_from_sentences(&episode_id, &sentences, &["HOST", "GUEST"]);
    store.put_transcript(&transcript, &[]).unwrap();
    let utterances = split_sentences(&transcript).unwrap();
    store.replace_utterances(&episode_id, &utterances).unwrap();
    store.create_tasks(&episode_id, 20.0).unwrap();
    (episode_id, utterances)
}

fn only_task(store: &Store, ep: &EpisodeId) -> TaskId {
    let tasks = store.tasks(ep).unwrap();
    assert_eq!(tasks.len(), 1);
    tasks[0].task_id.clone()
}

fn claim_all(store: &Store, task: &TaskId, names: &[&str]) {
    for n in names {
        store.claim_task(task, &ann(n), t0()).unwrap();
    }
}

fn worthy(u: &Utterance) -> AnnotationPayload {
    AnnotationPayload::check_worthy(u.utterance_id.clone(), ClaimType::NumericalClaim)
        .with_motivations([Motivation::LearnMore])
}

fn unworthy(u: &Utterance) -> AnnotationPayload {
    AnnotationPayload::not_check_worthy(u.utterance_id.clone(), NotCheckableReason::EmotionsAndOpinions)
}

fn validation_field(err: StoreError) -> &'static str {
    match err {
        StoreError::Workflow(WorkflowError::Validation(v)) => v.field,
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn handle_reports_migrations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/podfact.db");
    let h = Store::open(&path).unwrap().handle().unwrap();
    assert_eq!(h.schema_version, 1);
    assert!(h.location.ends_with("podfact.db"));
    // Reopening does not re-run migrations.
    assert_eq!(Store::open(&path).unwrap().handle().unwrap(), h);
}

#[test]
fn persist_checks_parents() {
    let store = Store::open_in_memory().unwrap();
    let (ep, utts) = seed_episode(&store, "a", Category::Other, 2);
    let task = only_task(&store, &ep);

    let orphan_episode = Episode {
        episode_id: "ep-orphan".into(),
        guid: "g".into(),
        title: "t".into(),
        publication_date: None,
        audio_url: "https://x.org/o.mp3".parse().unwrap(),
        media_type: None,
        duration_s: None,
    };
    let err = store
        .persist(Entity::Episode {
            podcast_id: &"pod-missing".into(),
            episode: &orphan_episode,
        })
        .unwrap_err();
    assert!(matches!(err, StoreError::Integrity { parent: "podcast", .. }), "{err:?}");

    let mut stray = utts[0].clone();
    stray.episode_id = "ep-missing".into();
    stray.utterance_id = "ep-missing-u00000".into();
    let err = store.persist(Entity::Utterance(&stray)).unwrap_err();
    assert!(matches!(err, StoreError::Integrity { parent: "episode", .. }), "{err:?}");

    let mut record = Annotation::from_payload(
        "ann-1".into(),
        task.clone(),
        ann("a"),
        worthy(&utts[0]),
        t0(),
    );
    record.utterance_id = "ep-a/u99999".into();
    let err = store.persist(Entity::Annotation(&record)).unwrap_err();
    assert!(matches!(err, StoreError::Integrity { parent: "utterance", .. }), "{err:?}");

    record.utterance_id = utts[0].utterance_id.clone();
    assert_eq!(store.persist(Entity::Annotation(&record)).unwrap(), "ann-1");
    assert_eq!(store.annotations(&utts[0].utterance_id).unwrap(), vec![record]);

    let podcast = PodcastRecord {
        podcast_id: "pod-b".into(),
        title: "B".into(),
        category: Category::HealthAndWellness,
        language: "nb".into(),
    };
    assert_eq!(store.persist(Entity::Podcast(&podcast)).unwrap(), "pod-b");
    assert_eq!(store.podcast(&"pod-b".into()).unwrap(), podcast);
}

#[test]
fn episode_delete_cascades() {
    let store = Store::open_in_memory().unwrap();
    let (ep, utts) = seed_episode(&store, "a", Category::NewsAndPolitics, 4);
    let (other, other_utts) = seed_episode(&store, "b", Category::NewsAndPolitics, 3);
    let task = only_task(&store, &ep);
    claim_all(&store, &task, &["a", "b", "c"]);
    for n in ["a", "b", "c"] {
        store.submit_annotation(&task, &ann(n), worthy(&utts[0]), t0()).unwrap();
    }
    store
        .submit_factcheck(
            &utts[0].utterance_id,
            &ann("a"),
            FactCheckPayload {
                queries: vec!["harbour budget".into()],
                evidence: vec![Evidence {
                    document_id: "d1".into(),
                    url: "https://news.example.org/1".into(),
                    snippet: "The budget rose.".into(),
                    relevance: Relevance::Relevant,
                    doc_stance: DocStance::Supports,
                }],
                verdict: Some(Verdict::Supports),
            },
            t0(),
        )
        .unwrap();
    let count = |table: &str| {
        store
            .table_counts()
            .unwrap()
            .into_iter()
            .find(|(t, _)| *t == table)
            .unwrap()
            .1
    };
    assert_eq!(count("utterances"), 7);
    assert_eq!(count("annotations"), 3);
    assert_eq!(count("factcheck_evidence"), 1);

    store.delete_episode(&ep).unwrap();
    assert_eq!(count("episodes"), 1);
    assert_eq!(count("utterances"), other_utts.len() as i64);
    assert_eq!(count("words"), store.transcript(&other).unwrap().words.len() as i64);
    for t in ["annotations", "aggregated_labels", "factchecks", "factcheck_evidence", "task_assignees"] {
        assert_eq!(count(t), 0, "{t}");
    }
    assert_eq!(count("tasks"), 1);
    assert!(matches!(store.utterance(&utts[0].utterance_id), Err(StoreError::NotFound { .. })));
    assert!(matches!(store.delete_episode(&ep), Err(StoreError::NotFound { .. })));
}

#[test]
fn query_filters_are_conjunctions() {
    let store = Store::open_in_memory().unwrap();
    let (e, e_utts) = seed_episode(&store, "e", Category::NewsAndPolitics, 4);
    let (f, f_utts) = seed_episode(&store, "f", Category::HealthAndWellness, 5);
    let (te, tf) = (only_task(&store, &e), only_task(&store, &f));
    claim_all(&store, &te, &["a", "b", "c"]);
    claim_all(&store, &tf, &["a", "b", "c"]);
    // 12 annotations on E: all four utterances at quorum, the first three unanimous.
    for (i, u) in e_utts.iter().enumerate() {
        for (k, n) in ["a", "b", "c"].iter().enumerate() {
            let p = if i == 3 && k == 2 { unworthy(u) } else { worthy(u) };
            store.submit_annotation(&te, &ann(n), p, t0()).unwrap();
        }
    }
    // 5 elsewhere.
    for (u, n) in [(0, "a"), (0, "b"), (0, "c"), (1, "a"), (2, "b")] {
        store.submit_annotation(&tf, &ann(n), unworthy(&f_utts[u]), t0()).unwrap();
    }

    let on_e = QueryFilter {
        episode_id: Some(e.clone()),
        ..Default::default()
    };
    assert_eq!(store.query_annotations(&on_e).unwrap().len(), 12);
    assert_eq!(store.query_annotations(&QueryFilter::default()).unwrap().len(), 17);
    assert_eq!(store.query(&on_e).unwrap().len(), 4);
    assert_eq!(store.query(&QueryFilter::default()).unwrap().len(), 9);

    let retained_worthy = QueryFilter::from_pairs([("label", "CHECK_WORTHY"), ("status", "retained")]).unwrap();
    let hits = store.query(&retained_worthy).unwrap();
    assert_eq!(hits.len(), 3);
    assert!(hits.iter().all(|r| r.utterance.episode_id == e && r.aggregate.is_retained_check_worthy()));
    let idx: Vec<_> = hits.iter().map(|r| r.utterance.index).collect();
    assert_eq!(idx, [0, 1, 2]);

    let health = QueryFilter::from_pairs([("topic", "HEALTH_AND_WELLNESS")]).unwrap();
    assert_eq!(store.query_annotations(&health).unwrap().len(), 5);
    let discarded = QueryFilter {
        status: Some(AggregationStatus::Discarded),
        ..Default::default()
    };
    assert_eq!(store.query(&discarded).unwrap().len(), 1);
    let pending = QueryFilter {
        status: Some(AggregationStatus::Pending),
        ..Default::default()
    };
    assert_eq!(store.query(&pending).unwrap().len(), 4);

    let first = store.query(&QueryFilter::default()).unwrap();
    assert_eq!(store.query(&QueryFilter::default()).unwrap(), first);
    assert!(matches!(
        QueryFilter::from_pairs([("colour", "red")]),
        Err(StoreError::Query(_))
    ));
    assert!(matches!(
        QueryFilter::from_pairs([("label", "MAYBE")]),
        Err(StoreError::Query(_))
    ));
}

#[test]
fn progress_counts_quorum_utterances() {
    let store = Store::open_in_memory().unwrap();
    let (ep, utts) = seed_episode(&store, "p", Category::Other, 100);
    let tasks = store.tasks(&ep).unwrap();
    assert_eq!(store.progress(&ep).unwrap(), 0.0);
    for t in &tasks {
        claim_all(&store, &t.task_id, &["a", "b", "c"]);
    }
    let task_of = |u: &Utterance| tasks.iter().find(|t| t.contains(u.index)).unwrap().task_id.clone();
    let mut last = 0.0;
    for u in utts.iter().take(50) {
        for n in ["a", "b", "c"] {
            store.submit_annotation(&task_of(u), &ann(n), unworthy(u), t0()).unwrap();
            let p = store.progress(&ep).unwrap();
            assert!(p >= last);
            last = p;
        }
    }
    assert_eq!(store.progress(&ep).unwrap(), 0.5);
    for u in utts.iter().skip(50) {
        for n in ["a", "b", "c"] {
            store.submit_annotation(&task_of(u), &ann(n), unworthy(u), t0()).unwrap();
        }
    }
    assert_eq!(store.progress(&ep).unwrap(), 1.0);
    let per_task = store.task_progress(&ep).unwrap();
    assert_eq!(per_task.len(), tasks.len());
    for tp in per_task {
        assert_eq!(tp.submissions[QUORUM], tp.utterance_range.len());
    }
    assert!(matches!(store.progress(&"ep-nope".into()), Err(StoreError::NotFound { .. })));
}

#[test]
fn submission_rules() {
    let store = Store::open_in_memory().unwrap();
    let (ep, utts) = seed_episode(&store, "s", Category::Other, 3);
    let task = only_task(&store, &ep);
    claim_all(&store, &task, &["a"]);

    let err = store.submit_annotation(&task, &ann("z"), worthy(&utts[0]), t0()).unwrap_err();
    assert!(matches!(err, StoreError::Workflow(WorkflowError::NotAssigned { .. })), "{err:?}");

    let mut bad = worthy(&utts[0]);
    bad.reason = Some(NotCheckableReason::Prediction);
    assert_eq!(validation_field(store.submit_annotation(&task, &ann("a"), bad, t0()).unwrap_err()), "reason");

    let mut bad = unworthy(&utts[0]);
    bad.motivations = vec![Motivation::Surprising];
    assert_eq!(
        validation_field(store.submit_annotation(&task, &ann("a"), bad, t0()).unwrap_err()),
        "motivations"
    );

    let first = store.submit_annotation(&task, &ann("a"), worthy(&utts[0]), t0()).unwrap();
    let second = store
        .submit_annotation(&task, &ann("a"), unworthy(&utts[0]), t0() + Duration::minutes(1))
        .unwrap();
    let live = store.annotations(&utts[0].utterance_id).unwrap();
    assert_eq!(live, vec![second.clone()]);
    assert_ne!(first.annotation_id, second.annotation_id);

    store.delete_annotation(&second.annotation_id, t0()).unwrap();
    assert!(store.annotations(&utts[0].utterance_id).unwrap().is_empty());
    assert!(matches!(
        store.delete_annotation(&second.annotation_id, t0()),
        Err(StoreError::NotFound { .. })
    ));
}

#[test]
fn claims_are_linearizable() {
    for round in 0..10 {
        let store = Arc::new(Store::open_in_memory().unwrap());
        let (ep, _) = seed_episode(&store, "c", Category::Other, 2);
        let task = only_task(&store, &ep);
        claim_all(&store, &task, &["a", "b"]);
        let gate = Arc::new(Barrier::new(8));
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let (store, task, gate) = (store.clone(), task.clone(), gate.clone());
                std::thread::spawn(move || {
                    gate.wait();
                    store.claim_task(&task, &ann(&format!("racer-{i}")), t0())
                })
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        let winners = results.iter().filter(|r| r.is_ok()).count();
        assert_eq!(winners, 1, "round {round}");
        for r in results.iter().filter_map(|r| r.as_ref().err()) {
            assert!(matches!(r, StoreError::Workflow(WorkflowError::TaskFull(_))), "{r:?}");
        }
        assert_eq!(store.task(&task).unwrap().assignees.len(), QUORUM);
    }
}

#[test]
fn duplicate_claim_and_stale_release() {
    let store = Store::open_in_memory().unwrap();
    let (ep, utts) = seed_episode(&store, "d", Category::Other, 2);
    let task = only_task(&store, &ep);
    claim_all(&store, &task, &["a", "b", "c"]);
    assert!(matches!(
        store.claim_task(&task, &ann("a"), t0()),
        Err(StoreError::Workflow(WorkflowError::AlreadyAssigned { .. }))
    ));
    assert!(matches!(
        store.claim_task(&task, &ann("d"), t0()),
        Err(StoreError::Workflow(WorkflowError::TaskFull(_)))
    ));
    // b keeps working; a finishes; c goes quiet.
    for u in &utts {
        store.submit_annotation(&task, &ann("a"), unworthy(u), t0() + Duration::hours(1)).unwrap();
    }
    store
        .submit_annotation(&task, &ann("b"), unworthy(&utts[0]), t0() + Duration::hours(40))
        .unwrap();

    let later = t0() + Duration::hours(49);
    assert_eq!(store.release_stale_claims(&task, later).unwrap(), vec![ann("c")]);
    let claimed = store.claim_task(&task, &ann("d"), later).unwrap();
    assert_eq!(claimed.assignees, vec![ann("a"), ann("b"), ann("d")]);
}

#[test]
fn factchecks_require_retained_check_worthy() {
    let store = Store::open_in_memory().unwrap();
    let (ep, utts) = seed_episode(&store, "f", Category::NewsAndPolitics, 3);
    let task = only_task(&store, &ep);
    claim_all(&store, &task, &["a", "b", "c"]);
    for n in ["a", "b", "c"] {
        store.submit_annotation(&task, &ann(n), worthy(&utts[0]), t0()).unwrap();
    }
    for (n, p) in [("a", worthy(&utts[1])), ("b", worthy(&utts[1])), ("c", unworthy(&utts[1]))] {
        store.submit_annotation(&task, &ann(n), p, t0()).unwrap();
    }
    store.submit_annotation(&task, &ann("a"), worthy(&utts[2]), t0()).unwrap();

    let agg = store.aggregate(&utts[0].utterance_id).unwrap();
    assert_eq!(agg.status, AggregationStatus::Retained);
    assert_eq!(agg.label, Some(CheckworthyLabel::CheckWorthy));
    assert_eq!(agg.claim_type, Some(ClaimType::NumericalClaim));
    assert_eq!(agg.motivations, vec![Motivation::LearnMore; 3]);
    assert_eq!(store.aggregate(&utts[1].utterance_id).unwrap().status, AggregationStatus::Discarded);
    assert_eq!(store.aggregate(&utts[2].utterance_id).unwrap().status, AggregationStatus::Pending);

    let draft = store.open_factcheck(&utts[0].utterance_id, &ann("a")).unwrap();
    assert!(draft.queries.is_empty() && draft.verdict.is_none());
    for u in &utts[1..] {
        assert!(matches!(
            store.open_factcheck(&u.utterance_id, &ann("a")),
            Err(StoreError::Workflow(WorkflowError::NotEligible(_)))
        ));
    }

    let doc = |relevance, doc_stance| Evidence {
        document_id: "d".into(),
        url: "https://news.example.org/d".into(),
        snippet: "Figures from the port authority.".into(),
        relevance,
        doc_stance,
    };
    let no_queries = FactCheckPayload {
        queries: vec![],
        evidence: vec![],
        verdict: None,
    };
    let err = store.submit_factcheck(&utts[0].utterance_id, &ann("a"), no_queries, t0()).unwrap_err();
    assert_eq!(validation_field(err), "queries");
    let irrelevant = FactCheckPayload {
        queries: vec!["port tonnage".into()],
        evidence: vec![doc(Relevance::NotRelevant, DocStance::Refutes)],
        verdict: Some(Verdict::Refutes),
    };
    let err = store.submit_factcheck(&utts[0].utterance_id, &ann("a"), irrelevant, t0()).unwrap_err();
    assert_eq!(validation_field(err), "verdict");

    let good = FactCheckPayload {
        queries: vec!["port tonnage".into()],
        evidence: vec![doc(Relevance::Relevant, DocStance::Supports), doc(Relevance::NotRelevant, DocStance::Neutral)],
        verdict: Some(Verdict::Supports),
    };
    store.submit_factcheck(&utts[0].utterance_id, &ann("a"), good.clone(), t0()).unwrap();
    let stored = store.submit_factcheck(&utts[0].utterance_id, &ann("a"), good, t0()).unwrap();
    assert_eq!(store.factchecks(&utts[0].utterance_id).unwrap(), vec![stored]);
    assert!(matches!(
        store.submit_factcheck(
            &utts[1].utterance_id,
            &ann("a"),
            FactCheckPayload {
                queries: vec!["q".into()],
                evidence: vec![],
                verdict: None
            },
            t0()
        ),
        Err(StoreError::Workflow(WorkflowError::NotEligible(_)))
    ));

    // Flipping a fact-checked claim's label would orphan the fact-check.
    let err = store.submit_annotation(&task, &ann("c"), unworthy(&utts[0]), t0()).unwrap_err();
    assert!(matches!(err, StoreError::Conflict(_)), "{err:?}");
    assert!(store.aggregate(&utts[0].utterance_id).unwrap().is_retained_check_worthy());
}

#[test]
fn resegmenting_annotated_episode_conflicts() {
    let store = Store::open_in_memory().unwrap();
    let (ep, utts) = seed_episode(&store, "r", Category::Other, 2);
    assert!(matches!(store.replace_utterances(&ep, &utts), Err(StoreError::Conflict(_))));
    assert!(matches!(store.create_tasks(&ep, 20.0), Err(StoreError::Conflict(_))));
}

#[test]
fn dump_and_load_round_trip() {
    let store = Store::open_in_memory().unwrap();
    let (ep, utts) = seed_episode(&store, "x", Category::HealthAndWellness, 3);
    let task = only_task(&store, &ep);
    claim_all(&store, &task, &["a", "b", "c"]);
    for n in ["a", "b", "c"] {
        store.submit_annotation(&task, &ann(n), worthy(&utts[1]), t0()).unwrap();
    }
    store.submit_annotation(&task, &ann("a"), unworthy(&utts[2]), t0()).unwrap();
    store.submit_annotation(&task, &ann("a"), worthy(&utts[2]), t0()).unwrap();

    let mut dump = Vec::new();
    let rows = store.export_jsonl(&mut dump).unwrap();
    assert_eq!(rows, dump.iter().filter(|b| **b == b'\n').count());
    for line in dump.split(|b| *b == b'\n').filter(|l| !l.is_empty()) {
        let v: serde_json::Value = serde_json::from_slice(line).unwrap();
        assert!(v["table"].is_string());
    }

    let copy = Store::open_in_memory().unwrap();
    assert_eq!(copy.import_jsonl(dump.as_slice()).unwrap(), rows);
    assert_eq!(copy.table_counts().unwrap(), store.table_counts().unwrap());
    assert_eq!(copy.query(&QueryFilter::default()).unwrap(), store.query(&QueryFilter::default()).unwrap());
    assert_eq!(
        copy.query_annotations(&QueryFilter::default()).unwrap(),
        store.query_annotations(&QueryFilter::default()).unwrap()
    );
    assert_eq!(copy.tasks(&ep).unwrap(), store.tasks(&ep).unwrap());
    assert_eq!(copy.transcript(&ep).unwrap(), store.transcript(&ep).unwrap());

    let mut again = Vec::new();
    copy.export_jsonl(&mut again).unwrap();
    assert_eq!(again, dump);

    assert!(matches!(
        Store::open_in_memory().unwrap().import_jsonl(&b"{\"table\":\"secrets\"}\n"[..]),
        Err(StoreError::Query(_))
    ));
}
