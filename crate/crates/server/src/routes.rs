use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::{Extension, Json};
use podfact_core::annotation::{AnnotationPayload, FactCheckPayload, WorkflowError};
use podfact_core::dataset::{self, ExportKind, SplitName};
use podfact_core::store::StoreError;
use podfact_core::{EpisodeId, QueryFilter, SplitSpec, Store, TaskId, UtteranceId, Word};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::auth::{Session, EXPORTER_ROLE};
use crate::error::ApiError;
use crate::{audio, AppState};

pub const MAX_PAGE: usize = 200;

/// `Json` whose rejections use the API error body and status 400.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(rejection(e)),
        }
    }
}

fn rejection(e: JsonRejection) -> ApiError {
    ApiError::bad_request(e.body_text())
}

/// Runs a store call off the async workers.
pub async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Store) -> Result<T, StoreError> + Send + 'static,
{
    let store = state.store.clone();
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

#[derive(Debug, Deserialize)]
pub struct Page {
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
}

impl Page {
    fn limit(&self) -> Result<usize, ApiError> {
        match self.limit {
            None => Ok(MAX_PAGE),
            Some(0) => Err(ApiError::bad_request("limit must be positive")),
            Some(n) if n > MAX_PAGE => Err(ApiError::bad_request(format!("limit is at most {MAX_PAGE}"))),
            Some(n) => Ok(n),
        }
    }
}

pub async fn healthz() -> &'static str {
    "ok"
}

pub async fn me(Extension(session): Extension<Session>) -> Json<Session> {
    Json(session)
}

pub async fn list_podcasts(State(state): State<AppState>, Query(page): Query<Page>) -> Result<Response, ApiError> {
    let (offset, limit) = (page.offset, page.limit()?);
    let items = blocking(&state, move |s| s.list_podcasts(offset, limit)).await?;
    Ok(Json(json!({ "offset": offset, "limit": limit, "items": items })).into_response())
}

pub async fn get_episode(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let id = EpisodeId::new(id);
    let body = blocking(&state, move |s| {
        let (podcast_id, episode) = s.episode(&id)?;
        let utterance_count = s.utterance_count(&id)?;
        let tasks = s.tasks(&id)?;
        let has_audio = match s.audio_asset(&id) {
            Ok(_) => true,
            Err(StoreError::NotFound { .. }) => false,
            Err(e) => return Err(e),
        };
        Ok(json!({
            "podcast_id": podcast_id,
            "episode": episode,
            "utterance_count": utterance_count,
            "tasks": tasks,
            "has_audio": has_audio,
        }))
    })
    .await?;
    Ok(Json(body).into_response())
}

#[derive(Debug, Serialize)]
struct TimedWord {
    #[serde(flatten)]
    word: Word,
    speaker_id: Option<String>,
}

pub async fn get_utterances(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(page): Query<Page>,
) -> Result<Response, ApiError> {
    let id = EpisodeId::new(id);
    let (offset, limit) = (page.offset, page.limit()?);
    let body = blocking(&state, move |s| {
        s.episode(&id)?;
        let total = s.utterance_count(&id)?;
        let mut items = Vec::new();
        for u in s.utterance_page(&id, offset, limit)? {
            let words: Vec<TimedWord> = s
                .words(&id, u.first_word..u.first_word + u.word_count)?
                .into_iter()
                .map(|(word, speaker_id)| TimedWord { word, speaker_id })
                .collect();
            let mut item = serde_json::to_value(&u).expect("utterances serialize");
            item["words"] = serde_json::to_value(words).expect("words serialize");
            items.push(item);
        }
        Ok(json!({ "episode_id": id, "offset": offset, "limit": limit, "total": total, "items": items }))
    })
    .await?;
    Ok(Json(body).into_response())
}

pub async fn claim_task(
    State(state): State<AppState>,
    Extension(session): Extension<Session>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let now = state.now();
    let task = blocking(&state, move |s| s.claim_task(&TaskId::new(id), &session.annotator_id, now)).await?;
    Ok(Json(task).into_response())
}

#[derive(Debug, Default, Deserialize)]
pub struct SubmitOptions {
    /// Claim the task first when the caller is not yet assigned.
    #[serde(default)]
    claim: bool,
}

pub async fn post_annotation(
    State(state): State<AppState>,
    Extension(session): Extension<Session>,
    Path(id): Path<String>,
    Query(options): Query<SubmitOptions>,
    Body(payload): Body<AnnotationPayload>,
) -> Result<Response, ApiError> {
    payload.validate_taxonomy()?;
    let now = state.now();
    let record = blocking(&state, move |s| {
        let task_id = TaskId::new(id);
        if options.claim && !s.task(&task_id)?.is_assigned(&session.annotator_id) {
            s.claim_task(&task_id, &session.annotator_id, now)?;
        }
        s.submit_annotation(&task_id, &session.annotator_id, payload, now)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

pub async fn post_factcheck(
    State(state): State<AppState>,
    Extension(session): Extension<Session>,
    Path(id): Path<String>,
    Body(payload): Body<FactCheckPayload>,
) -> Result<Response, ApiError> {
    payload.validate().map_err(WorkflowError::from)?;
    let now = state.now();
    let record = blocking(&state, move |s| {
        s.submit_factcheck(&UtteranceId::new(id), &session.annotator_id, payload, now)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

pub async fn get_progress(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let id = EpisodeId::new(id);
    let body = blocking(&state, move |s| {
        let fraction = s.progress(&id)?;
        let per_task = s.task_progress(&id)?;
        Ok(json!({ "episode_id": id, "fraction": fraction, "per_task": per_task }))
    })
    .await?;
    Ok(Json(body).into_response())
}

pub async fn get_audio(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let id = EpisodeId::new(id);
    let asset = blocking(&state, move |s| {
        s.episode(&id)?;
        s.audio_asset(&id)
    })
    .await?;
    let path = if asset.local_path.is_relative() {
        state.assets_dir.join(&asset.local_path)
    } else {
        asset.local_path.clone()
    };
    audio::serve(path, asset.byte_length, &asset.media_type, &headers).await
}

#[derive(Debug, Default, Deserialize)]
pub struct ExportQuery {
    splits: Option<String>,
    #[serde(default)]
    seed: u64,
    split: Option<String>,
}

pub async fn export(
    State(state): State<AppState>,
    Extension(session): Extension<Session>,
    Path(kind): Path<String>,
    Query(q): Query<ExportQuery>,
) -> Result<Response, ApiError> {
    if !session.has_role(EXPORTER_ROLE) {
        return Err(ApiError::forbidden("exporting requires the exporter role"));
    }
    let kind: ExportKind = kind.parse().map_err(|_| ApiError::not_found(format!("no dataset {kind:?}")))?;
    let spec = q.splits.as_deref().map(|s| SplitSpec::parse(s, q.seed)).transpose()?;
    let wanted: Option<SplitName> = q.split.as_deref().map(str::parse).transpose()?;
    match (&spec, wanted) {
        (Some(_), None) => return Err(ApiError::bad_request("splits needs split=train|dev|test")),
        (None, Some(_)) => return Err(ApiError::bad_request("split needs splits=<train,dev,test>")),
        _ => {}
    }
    let (records, factchecks) = blocking(&state, |s| {
        let all = QueryFilter::default();
        Ok((s.query(&all)?, s.factcheck_records(&all)?))
    })
    .await?;
    let parts = tokio::task::spawn_blocking(move || dataset::export_jsonl(kind, &records, &factchecks, spec.as_ref()))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))??;
    let bytes = parts
        .into_iter()
        .find(|(name, _)| *name == wanted)
        .map(|(_, b)| b)
        .unwrap_or_default();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response())
}
