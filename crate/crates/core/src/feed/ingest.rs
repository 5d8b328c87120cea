use serde::Serialize;
use url::Url;

use super::{parse_feed, AssetStore, AudioAsset, FeedError, FetchError};
use crate::ids::{EpisodeId, PodcastId};
use crate::store::{Entity, Store, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error(transparent)]
    Feed(#[from] FeedError),
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub podcast_id: PodcastId,
    pub title: String,
    pub episodes: Vec<EpisodeId>,
    pub assets: Vec<AudioAsset>,
    /// Episodes whose audio could not be fetched, with the reason.
    pub failures: Vec<(EpisodeId, String)>,
    pub warnings: Vec<String>,
}

pub async fn fetch_feed(client: &reqwest::Client, url: &Url) -> Result<String, FetchError> {
    let transport = |e: reqwest::Error| FetchError::Transport {
        url: url.to_string(),
        message: e.to_string(),
    };
    let response = client.get(url.clone()).send().await.map_err(transport)?;
    if !response.status().is_success() {
        return Err(FetchError::Status {
            status: response.status().as_u16(),
            url: url.to_string(),
        });
    }
    response.text().await.map_err(transport)
}

/// Parses a feed, upserts the podcast and its episodes and, unless
/// `fetch_audio` is false, downloads each enclosure. A failed download is
/// reported but does not stop the others.
pub async fn ingest(
    store: &Store,
    assets: &AssetStore,
    client: &reqwest::Client,
    xml: &str,
    fetch_audio: bool,
) -> Result<IngestReport, IngestError> {
    let parsed = parse_feed(xml)?;
    let feed = parsed.value;
    store.upsert_feed(&feed)?;
    let mut report = IngestReport {
        podcast_id: feed.podcast_id.clone(),
        title: feed.title.clone(),
        episodes: feed.episodes.iter().map(|e| e.episode_id.clone()).collect(),
        assets: Vec::new(),
        failures: Vec::new(),
        warnings: parsed.warnings,
    };
    if !fetch_audio {
        return Ok(report);
    }
    for episode in &feed.episodes {
        match assets.fetch_audio(client, episode).await {
            Ok(asset) => {
                store.persist(Entity::AudioAsset(&asset))?;
                report.assets.push(asset);
            }
            Err(e) => {
                tracing::warn!(episode = %episode.episode_id, error = %e, "audio fetch failed");
                report.failures.push((episode.episode_id.clone(), e.to_string()));
            }
        }
    }
    Ok(report)
}
