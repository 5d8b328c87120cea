use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use podfact_core::annotation::{AnnotationPayload, ClaimType, NotCheckableReason};
use podfact_core::dataset::{self, ExportKind};
use podfact_core::feed::{parse_feed, AssetStore};
use podfact_core::segment::split_sentences;
use podfact_core::store::{Entity, PodcastRecord};
use podfact_core::transcript::{assign_speakers, parse_asr_document, parse_diarization};
use podfact_core::{Category, EpisodeId, PodcastId, QueryFilter, Store};
use podfact_server::{router, AppState, Registry, Session};
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

const FEED: &str = include_str!("../../core/fixtures/feed.xml");
const ASR: &str = include_str!("../../core/fixtures/asr_100.json");
const DIARIZATION: &str = include_str!("../../core/fixtures/diarization.json");
const AUDIO: &[u8] = include_bytes!("../../core/fixtures/audio_4096.mp3");

struct Fixture {
    store: Arc<Store>,
    state: AppState,
    episode: EpisodeId,
    /// An episode with neither transcript nor audio.
    bare_episode: EpisodeId,
    _assets: TempDir,
}

fn registry() -> Registry {
    let mut r = Registry::default();
    for (token, id, roles) in [
        ("tok-a", "ann-a", vec![]),
        ("tok-b", "ann-b", vec![]),
        ("tok-c", "ann-c", vec![]),
        ("tok-d", "ann-d", vec![]),
        ("tok-x", "exporter", vec!["exporter".to_owned()]),
    ] {
        r.insert(
            token,
            Session {
                annotator_id: id.into(),
                locale: "en".into(),
                roles,
            },
        )
        .unwrap();
    }
    r
}

fn fixture() -> Fixture {
    let store = Arc::new(Store::open_in_memory().unwrap());
    let feed = parse_feed(FEED).unwrap().value;
    store.upsert_feed(&feed).unwrap();
    store
        .persist(Entity::Podcast(&PodcastRecord {
            podcast_id: PodcastId::new("pod-aardvark"),
            title: "Aardvark Hour".into(),
            category: Category::HealthAndWellness,
            language: "da".into(),
        }))
        .unwrap();

    let episode = feed.episodes[0].episode_id.clone();
    let transcript = parse_asr_document(episode.clone(), ASR).unwrap().value;
    let segments = parse_diarization(DIARIZATION).unwrap();
    let transcript = assign_speakers(transcript, &segments);
    store.put_transcript(&transcript, &segments).unwrap();
    store.replace_utterances(&episode, &split_sentences(&transcript).unwrap()).unwrap();
    store.create_tasks(&episode, 20.0).unwrap();

    let assets = TempDir::new().unwrap();
    let asset = AssetStore::new(assets.path())
        .store_bytes(episode.clone(), AUDIO, "audio/mpeg", "mp3")
        .unwrap();
    store.persist(Entity::AudioAsset(&asset)).unwrap();

    let state = AppState::new(store.clone(), assets.path(), registry());
    Fixture {
        store,
        state,
        episode,
        bare_episode: feed.episodes[1].episode_id.clone(),
        _assets: assets,
    }
}

impl Fixture {
    fn app(&self) -> Router {
        router(self.state.clone())
    }

    fn task(&self) -> String {
        self.store.tasks(&self.episode).unwrap()[0].task_id.to_string()
    }

    fn utterance(&self, i: usize) -> String {
        self.store.utterances(&self.episode).unwrap()[i].utterance_id.to_string()
    }
}

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or(Value::Null)
    }
}

async fn send(app: &Router, req: Request<Body>) -> Reply {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

fn get(uri: &str, token: Option<&str>) -> Request<Body> {
    let mut b = Request::get(uri);
    if let Some(t) = token {
        b = b.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    b.body(Body::empty()).unwrap()
}

fn post(uri: &str, token: &str, body: &Value) -> Request<Body> {
    Request::builder()
        .method(Method::POST)
        .uri(uri)
        .header(header::AUTHORIZATION, format!("Bearer {token}"))
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn check_worthy(utterance: &str) -> Value {
    serde_json::to_value(AnnotationPayload::check_worthy(utterance, ClaimType::NumericalClaim)).unwrap()
}

#[tokio::test]
async fn authentication() {
    let f = fixture();
    let app = f.app();
    assert_eq!(send(&app, get("/healthz", None)).await.status, StatusCode::OK);
    let r = send(&app, get("/api/podcasts", None)).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
    assert_eq!(r.headers[header::WWW_AUTHENTICATE], "Bearer");
    assert_eq!(r.json()["error"]["code"], "unauthorized");
    assert_eq!(send(&app, get("/api/podcasts", Some("nope"))).await.status, StatusCode::UNAUTHORIZED);
    let unauth_post = Request::post(format!("/api/tasks/{}/claim", f.task())).body(Body::empty()).unwrap();
    assert_eq!(send(&app, unauth_post).await.status, StatusCode::UNAUTHORIZED);
    let me = send(&app, get("/api/me", Some("tok-x"))).await.json();
    assert_eq!(me, json!({"annotator_id": "exporter", "locale": "en", "roles": ["exporter"]}));
}

#[tokio::test]
async fn podcast_listing() {
    let app = router(AppState::new(Arc::new(Store::open_in_memory().unwrap()), "/tmp", registry()));
    let empty = send(&app, get("/api/podcasts", Some("tok-a"))).await.json();
    assert_eq!(empty["items"], json!([]));

    let f = fixture();
    let page = send(&f.app(), get("/api/podcasts", Some("tok-a"))).await.json();
    let items = page["items"].as_array().unwrap();
    let summary: Vec<_> = items
        .iter()
        .map(|p| (p["title"].as_str().unwrap(), p["episode_count"].as_u64().unwrap()))
        .collect();
    let feed = parse_feed(FEED).unwrap().value;
    assert_eq!(
        summary,
        [("Aardvark Hour", 0), (feed.title.as_str(), feed.episodes.len() as u64)]
    );
    assert_eq!(items[1]["category"], "NEWS_AND_POLITICS");
    assert_eq!(items[1]["progress"], 0.0);
    let second = send(&f.app(), get("/api/podcasts?offset=1&limit=1", Some("tok-a"))).await.json();
    assert_eq!(second["items"].as_array().unwrap().len(), 1);
    assert_eq!(second["items"][0]["title"], feed.title.as_str());
    let too_big = send(&f.app(), get("/api/podcasts?limit=201", Some("tok-a"))).await;
    assert_eq!(too_big.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn episode_and_utterances() {
    let f = fixture();
    let app = f.app();
    let ep = send(&app, get(&format!("/api/episodes/{}", f.episode), Some("tok-a"))).await.json();
    let n = f.store.utterances(&f.episode).unwrap().len();
    assert_eq!(ep["utterance_count"], n);
    assert_eq!(ep["has_audio"], true);
    assert_eq!(ep["tasks"].as_array().unwrap().len(), f.store.tasks(&f.episode).unwrap().len());
    let bare = send(&app, get(&format!("/api/episodes/{}", f.bare_episode), Some("tok-a"))).await.json();
    assert_eq!((bare["utterance_count"].as_u64(), bare["has_audio"].as_bool()), (Some(0), Some(false)));
    assert_eq!(
        send(&app, get("/api/episodes/ep-missing", Some("tok-a"))).await.status,
        StatusCode::NOT_FOUND
    );

    let uri = |o: usize, l: usize| format!("/api/episodes/{}/utterances?offset={o}&limit={l}", f.episode);
    let page = send(&app, get(&uri(0, 10), Some("tok-a"))).await.json();
    let items = page["items"].as_array().unwrap();
    assert_eq!(items.len(), 10);
    assert_eq!(page["total"], n);
    let starts: Vec<f64> = items.iter().map(|u| u["start_s"].as_f64().unwrap()).collect();
    assert!(starts.windows(2).all(|w| w[0] <= w[1]));
    for u in items {
        let words = u["words"].as_array().unwrap();
        assert_eq!(words.len() as u64, u["word_count"].as_u64().unwrap());
        assert_eq!(words[0]["start_s"], u["start_s"]);
        let joined: Vec<_> = words.iter().map(|w| w["text"].as_str().unwrap()).collect();
        assert_eq!(joined.join(" "), u["text"].as_str().unwrap());
    }

    let tail = send(&app, get(&uri(n - 3, 10), Some("tok-a"))).await.json();
    assert_eq!(tail["items"].as_array().unwrap().len(), 3);
    let past = send(&app, get(&uri(n + 5, 10), Some("tok-a"))).await.json();
    assert_eq!(past["items"], json!([]));
    let missing = send(&app, get("/api/episodes/ep-missing/utterances", Some("tok-a"))).await;
    assert_eq!(missing.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn task_and_annotation_workflow() {
    let f = fixture();
    let app = f.app();
    let task = f.task();
    let claim = |tok: &'static str| post(&format!("/api/tasks/{task}/claim"), tok, &json!({}));
    let annotate = |tok: &str, body: &Value, implicit: bool| {
        let q = if implicit { "?claim=true" } else { "" };
        post(&format!("/api/tasks/{task}/annotations{q}"), tok, body)
    };
    let u0 = f.utterance(0);

    // Not assigned yet.
    let r = send(&app, annotate("tok-a", &check_worthy(&u0), false)).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    assert_eq!(r.json()["error"]["code"], "not_assigned");

    let r = send(&app, claim("tok-a")).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["assignees"], json!(["ann-a"]));
    let r = send(&app, claim("tok-a")).await;
    assert_eq!((r.status, r.json()["error"]["code"].clone()), (StatusCode::CONFLICT, json!("already_assigned")));

    let r = send(&app, annotate("tok-a", &check_worthy(&u0), false)).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let stored = r.json();
    assert!(!stored["annotation_id"].as_str().unwrap().is_empty());
    assert_eq!(stored["label"], "CHECK_WORTHY");
    assert_eq!(stored["claim_type"], "NUMERICAL_CLAIM");
    assert_eq!(f.store.annotations(&u0.as_str().into()).unwrap().len(), 1);

    let mut both = check_worthy(&u0);
    both["reason"] = json!("PREDICTION");
    let r = send(&app, annotate("tok-a", &both, false)).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.json()["error"]["field"], "reason");

    let r = send(&app, annotate("tok-a", &json!({"utterance_id": u0, "label": "MAYBE"}), false)).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    // Span outside the utterance text is caught by the store-side validation.
    let mut span = check_worthy(&u0);
    span["span"] = json!({"utterance_id": u0, "char_start": 0, "char_end": 100000});
    let r = send(&app, annotate("tok-a", &span, false)).await;
    assert_eq!((r.status, r.json()["error"]["field"].clone()), (StatusCode::BAD_REQUEST, json!("span")));

    // Implicit claim fills the task; the fourth annotator is turned away.
    for tok in ["tok-b", "tok-c"] {
        assert_eq!(send(&app, annotate(tok, &check_worthy(&u0), true)).await.status, StatusCode::CREATED);
    }
    let r = send(&app, annotate("tok-d", &check_worthy(&u0), true)).await;
    assert_eq!((r.status, r.json()["error"]["code"].clone()), (StatusCode::CONFLICT, json!("task_full")));
    assert_eq!(send(&app, claim("tok-d")).await.status, StatusCode::CONFLICT);
    assert_eq!(
        send(&app, post("/api/tasks/nope/claim", "tok-a", &json!({}))).await.status,
        StatusCode::NOT_FOUND
    );

    let agg = f.store.aggregate(&u0.as_str().into()).unwrap();
    assert!(agg.is_retained_check_worthy());
}

#[tokio::test]
async fn factcheck_gating() {
    let f = fixture();
    let app = f.app();
    let task = f.task();
    let (u0, u1) = (f.utterance(0), f.utterance(1));
    for tok in ["tok-a", "tok-b", "tok-c"] {
        let uri = format!("/api/tasks/{task}/annotations?claim=true");
        assert_eq!(send(&app, post(&uri, tok, &check_worthy(&u0))).await.status, StatusCode::CREATED);
    }
    let good = json!({
        "queries": ["port tonnage 2023"],
        "evidence": [{
            "document_id": "d1", "url": "https://example.org/port", "snippet": "The port moved 12m tonnes.",
            "relevance": "RELEVANT", "doc_stance": "SUPPORTS"
        }],
        "verdict": "SUPPORTS"
    });
    let mut no_relevant = good.clone();
    no_relevant["evidence"][0]["relevance"] = json!("NOT_RELEVANT");
    let r = send(&app, post(&format!("/api/utterances/{u0}/factcheck"), "tok-a", &no_relevant)).await;
    assert_eq!((r.status, r.json()["error"]["field"].clone()), (StatusCode::BAD_REQUEST, json!("verdict")));
    let r = send(&app, post(&format!("/api/utterances/{u0}/factcheck"), "tok-a", &json!({"queries": []}))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = send(&app, post(&format!("/api/utterances/{u1}/factcheck"), "tok-a", &good)).await;
    assert_eq!((r.status, r.json()["error"]["code"].clone()), (StatusCode::CONFLICT, json!("not_eligible")));
    let r = send(&app, post("/api/utterances/nope/factcheck", "tok-a", &good)).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    let r = send(&app, post(&format!("/api/utterances/{u0}/factcheck"), "tok-a", &good)).await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_eq!(r.json()["verdict"], "SUPPORTS");
    assert_eq!(f.store.factchecks(&u0.as_str().into()).unwrap().len(), 1);
}

#[tokio::test]
async fn progress_matches_store() {
    let f = fixture();
    let app = f.app();
    let uri = format!("/api/episodes/{}/progress", f.episode);
    let fresh = send(&app, get(&uri, Some("tok-a"))).await.json();
    assert_eq!(fresh["fraction"], 0.0);

    let task = f.task();
    let utterances = f.store.utterances(&f.episode).unwrap();
    for (k, tok) in ["tok-a", "tok-b", "tok-c"].into_iter().enumerate() {
        for u in utterances.iter().take(2 + 3 * k) {
            let body = serde_json::to_value(AnnotationPayload::not_check_worthy(
                u.utterance_id.clone(),
                NotCheckableReason::BroadcastDetails,
            ))
            .unwrap();
            let r = send(&app, post(&format!("/api/tasks/{task}/annotations?claim=true"), tok, &body)).await;
            assert_eq!(r.status, StatusCode::CREATED);
        }
    }
    let mixed = send(&app, get(&uri, Some("tok-a"))).await.json();
    assert_eq!(mixed["fraction"].as_f64().unwrap(), f.store.progress(&f.episode).unwrap());
    assert!((mixed["fraction"].as_f64().unwrap() - 2.0 / utterances.len() as f64).abs() < 1e-12);
    let per_task = &mixed["per_task"][0];
    let n = utterances.len() as u64;
    assert_eq!(per_task["submissions"], json!([n - 8, 3, 3, 2]));
    assert_eq!(per_task["assignees"], json!(["ann-a", "ann-b", "ann-c"]));
    assert_eq!(
        send(&app, get("/api/episodes/ep-missing/progress", Some("tok-a"))).await.status,
        StatusCode::NOT_FOUND
    );
}

fn ranged(uri: &str, range: &str) -> Request<Body> {
    Request::get(uri)
        .header(header::AUTHORIZATION, "Bearer tok-a")
        .header(header::RANGE, range)
        .body(Body::empty())
        .unwrap()
}

#[tokio::test]
async fn audio_ranges() {
    let f = fixture();
    let app = f.app();
    let uri = format!("/api/episodes/{}/audio", f.episode);

    let r = send(&app, ranged(&uri, "bytes=0-1023")).await;
    assert_eq!(r.status, StatusCode::PARTIAL_CONTENT);
    assert_eq!(r.body, &AUDIO[..1024]);
    assert_eq!(r.headers[header::CONTENT_RANGE], "bytes 0-1023/4096");
    assert_eq!(r.headers[header::CONTENT_LENGTH], "1024");
    assert_eq!(r.headers[header::CONTENT_TYPE], "audio/mpeg");

    let r = send(&app, ranged(&uri, "bytes=4000-")).await;
    assert_eq!((r.status, r.body.as_slice()), (StatusCode::PARTIAL_CONTENT, &AUDIO[4000..]));
    assert_eq!(r.headers[header::CONTENT_RANGE], "bytes 4000-4095/4096");
    let r = send(&app, ranged(&uri, "bytes=-16")).await;
    assert_eq!((r.status, r.body.as_slice()), (StatusCode::PARTIAL_CONTENT, &AUDIO[4080..]));

    let r = send(&app, ranged(&uri, "bytes=4096-5000")).await;
    assert_eq!(r.status, StatusCode::RANGE_NOT_SATISFIABLE);
    assert_eq!(r.headers[header::CONTENT_RANGE], "bytes */4096");

    let r = send(&app, get(&uri, Some("tok-a"))).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body, AUDIO);
    assert_eq!(r.headers[header::CONTENT_LENGTH], "4096");
    assert_eq!(r.headers[header::ACCEPT_RANGES], "bytes");

    let bare = format!("/api/episodes/{}/audio", f.bare_episode);
    assert_eq!(send(&app, get(&bare, Some("tok-a"))).await.status, StatusCode::NOT_FOUND);
    assert_eq!(
        send(&app, get("/api/episodes/nope/audio", Some("tok-a"))).await.status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn export_requires_role_and_matches_library() {
    let empty = router(AppState::new(Arc::new(Store::open_in_memory().unwrap()), "/tmp", registry()));
    let r = send(&empty, get("/api/export/stance", Some("tok-x"))).await;
    assert_eq!((r.status, r.body.len()), (StatusCode::OK, 0));
    assert_eq!(r.headers[header::CONTENT_TYPE], "application/x-ndjson");

    let f = fixture();
    let app = f.app();
    assert_eq!(send(&app, get("/api/export/claims", Some("tok-a"))).await.status, StatusCode::FORBIDDEN);
    assert_eq!(send(&app, get("/api/export/other", Some("tok-x"))).await.status, StatusCode::NOT_FOUND);

    let task = f.task();
    let utterances = f.store.utterances(&f.episode).unwrap();
    for tok in ["tok-a", "tok-b", "tok-c"] {
        for (i, u) in utterances.iter().enumerate() {
            let payload = if i % 4 == 0 {
                AnnotationPayload::check_worthy(u.utterance_id.clone(), ClaimType::FactualDescription)
            } else {
                AnnotationPayload::not_check_worthy(u.utterance_id.clone(), NotCheckableReason::NonFactualStatement)
            };
            let body = serde_json::to_value(payload).unwrap();
            let uri = format!("/api/tasks/{task}/annotations?claim=true");
            assert_eq!(send(&app, post(&uri, tok, &body)).await.status, StatusCode::CREATED);
        }
    }
    let r = send(&app, get("/api/export/claims", Some("tok-x"))).await;
    assert_eq!(r.status, StatusCode::OK);
    let records = f.store.query(&QueryFilter::default()).unwrap();
    let facts = f.store.factcheck_records(&QueryFilter::default()).unwrap();
    let expected = dataset::export_jsonl(ExportKind::Claims, &records, &facts, None).unwrap();
    assert_eq!(r.body, expected[0].1);
    let text = String::from_utf8(r.body).unwrap();
    assert_eq!(text.lines().count(), utterances.len());
    let positives = text
        .lines()
        .filter(|l| serde_json::from_str::<Value>(l).unwrap()["label"] == true)
        .count();
    assert_eq!(positives, utterances.len().div_ceil(4));

    for bad in ["splits=1,2", "splits=a,b,c&split=train", "splits=0.5,0.5,0.5&split=dev", "splits=1,1,9&split=dev"] {
        let r = send(&app, get(&format!("/api/export/claims?{bad}"), Some("tok-x"))).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{bad}");
    }
    let r = send(&app, get("/api/export/claims?split=dev", Some("tok-x"))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    // Fractions are targets: the single annotated episode lands in train.
    let r = send(&app, get("/api/export/claims?splits=0.8,0.1,0.1&split=dev", Some("tok-x"))).await;
    assert_eq!((r.status, r.body.len()), (StatusCode::OK, 0));
    let r = send(&app, get("/api/export/claims?splits=0.8,0.1,0.1&split=train&seed=4", Some("tok-x"))).await;
    assert_eq!(r.body.iter().filter(|b| **b == b'\n').count(), utterances.len());
}

#[tokio::test]
async fn idempotent_retries() {
    let f = fixture();
    let app = f.app();
    let task = f.task();
    let keyed = |uri: &str, tok: &str, key: &str, body: &Value| {
        let mut req = post(uri, tok, body);
        req.headers_mut().insert("idempotency-key", key.parse().unwrap());
        req
    };
    let claim_uri = format!("/api/tasks/{task}/claim");
    let first = send(&app, keyed(&claim_uri, "tok-a", "k1", &json!({}))).await;
    let again = send(&app, keyed(&claim_uri, "tok-a", "k1", &json!({}))).await;
    assert_eq!((first.status, again.status), (StatusCode::OK, StatusCode::OK));
    assert_eq!(first.body, again.body);
    assert_eq!(again.headers["idempotent-replay"], "true");
    // Without the key the retry is a second claim.
    assert_eq!(send(&app, post(&claim_uri, "tok-a", &json!({}))).await.status, StatusCode::CONFLICT);
    // Keys are scoped per annotator.
    assert_eq!(send(&app, keyed(&claim_uri, "tok-b", "k1", &json!({}))).await.status, StatusCode::OK);

    let ann_uri = format!("/api/tasks/{task}/annotations");
    let body = check_worthy(&f.utterance(2));
    let a = send(&app, keyed(&ann_uri, "tok-a", "k2", &body)).await;
    let b = send(&app, keyed(&ann_uri, "tok-a", "k2", &body)).await;
    assert_eq!((a.status, b.status), (StatusCode::CREATED, StatusCode::CREATED));
    assert_eq!(a.json()["annotation_id"], b.json()["annotation_id"]);
    let live = f.store.annotations(&f.utterance(2).as_str().into()).unwrap();
    assert_eq!(live.len(), 1);

    let other = check_worthy(&f.utterance(3));
    let c = send(&app, keyed(&ann_uri, "tok-a", "k2", &other)).await;
    assert_eq!(c.status, StatusCode::UNPROCESSABLE_ENTITY);

    // A rejected request replays its rejection too.
    let mut invalid = check_worthy(&f.utterance(3));
    invalid["claim_type"] = Value::Null;
    let x = send(&app, keyed(&ann_uri, "tok-a", "k3", &invalid)).await;
    let y = send(&app, keyed(&ann_uri, "tok-a", "k3", &invalid)).await;
    assert_eq!((x.status, y.status), (StatusCode::BAD_REQUEST, StatusCode::BAD_REQUEST));
}

#[tokio::test]
async fn per_token_request_cap() {
    let f = fixture();
    let app = router(f.state.clone().with_rate_cap(3, Duration::from_secs(3600)));
    for _ in 0..3 {
        assert_eq!(send(&app, get("/api/me", Some("tok-a"))).await.status, StatusCode::OK);
    }
    let r = send(&app, get("/api/me", Some("tok-a"))).await;
    assert_eq!(r.status, StatusCode::TOO_MANY_REQUESTS);
    assert!(r.headers.contains_key(header::RETRY_AFTER));
    assert_eq!(send(&app, get("/api/me", Some("tok-b"))).await.status, StatusCode::OK);
}

#[tokio::test]
async fn concurrent_claims_fill_exactly_one_quorum() {
    let f = fixture();
    let app = f.app();
    let task = f.task();
    let tokens = ["tok-a", "tok-b", "tok-c", "tok-d", "tok-x"];
    let handles: Vec<_> = tokens
        .iter()
        .map(|tok| {
            let app = app.clone();
            let req = post(&format!("/api/tasks/{task}/claim"), tok, &json!({}));
            tokio::spawn(async move { send(&app, req).await.status })
        })
        .collect();
    let mut ok = 0;
    for h in handles {
        match h.await.unwrap() {
            StatusCode::OK => ok += 1,
            s => assert_eq!(s, StatusCode::CONFLICT),
        }
    }
    assert_eq!(ok, 3);
    assert_eq!(f.store.task(&task.as_str().into()).unwrap().assignees.len(), 3);
}
