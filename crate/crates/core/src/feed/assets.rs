use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Episode, ACCEPTED_MEDIA_TYPES};
use crate::ids::EpisodeId;

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("HTTP status {status} fetching {url}")]
    Status { status: u16, url: String },
    #[error("transport error fetching {url}: {message}")]
    Transport { url: String, message: String },
    #[error("empty body fetching {url}")]
    EmptyBody { url: String },
    #[error("asset store I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl FetchError {
    pub fn status(&self) -> Option<u16> {
        match self {
            FetchError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioAsset {
    pub episode_id: EpisodeId,
    pub local_path: PathBuf,
    /// Lowercase hex SHA-256 of the stored bytes.
    pub content_hash: String,
    pub byte_length: u64,
    pub media_type: String,
}

impl AudioAsset {
    /// Re-hashes the file on disk and compares it with the recorded digest.
    pub fn verify(&self) -> std::io::Result<bool> {
        let bytes = std::fs::read(&self.local_path)?;
        Ok(bytes.len() as u64 == self.byte_length && hex::encode(Sha256::digest(&bytes)) == self.content_hash)
    }
}

/// Content-addressed audio storage laid out as `<root>/<first-2-hex>/<hash>.<ext>`.
#[derive(Debug, Clone)]
pub struct AssetStore {
    root: PathBuf,
    locks: Arc<Mutex<HashMap<String, Arc<Mutex<()>>>>>,
}

impl AssetStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            locks: Arc::default(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, content_hash: &str, ext: &str) -> PathBuf {
        self.root
            .join(&content_hash[..2])
            .join(format!("{content_hash}.{ext}"))
    }

    /// Downloads the episode enclosure and stores it. Fetching unchanged bytes
    /// again returns an identical asset.
    pub async fn fetch_audio(
        &self,
        client: &reqwest::Client,
        episode: &Episode,
    ) -> Result<AudioAsset, FetchError> {
        let url = episode.audio_url.to_string();
        let transport = |e: reqwest::Error| FetchError::Transport {
            url: url.clone(),
            message: e.to_string(),
        };
        let response = client.get(episode.audio_url.clone()).send().await.map_err(transport)?;
        let status = response.status();
        if !status.is_success() {
            return Err(FetchError::Status {
                status: status.as_u16(),
                url,
            });
        }
        let header_type = response
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(|v| v.split(';').next().unwrap_or(v).trim().to_lowercase());
        let bytes = response.bytes().await.map_err(transport)?;
        if bytes.is_empty() {
            return Err(FetchError::EmptyBody { url });
        }
        let media_type = header_type
            .filter(|t| t.starts_with("audio/"))
            .or_else(|| episode.media_type.clone())
            .unwrap_or_else(|| "application/octet-stream".to_owned());
        let ext = extension_for(&media_type, episode.audio_url.path());
        Ok(self.store_bytes(episode.episode_id.clone(), &bytes, &media_type, &ext)?)
    }

    /// Writes `bytes` under their content hash. Writers of the same hash are serialized.
    pub fn store_bytes(
        &self,
        episode_id: EpisodeId,
        bytes: &[u8],
        media_type: &str,
        ext: &str,
    ) -> std::io::Result<AudioAsset> {
        if !ACCEPTED_MEDIA_TYPES.contains(&media_type) {
            tracing::warn!(%episode_id, media_type, "storing audio with unusual media type");
        }
        let content_hash = hex::encode(Sha256::digest(bytes));
        let path = self.path_for(&content_hash, ext);
        let lock = self
            .locks
            .lock()
            .entry(content_hash.clone())
            .or_default()
            .clone();
        {
            let _guard = lock.lock();
            if !path.exists() {
                let dir = path.parent().expect("asset path has a parent");
                std::fs::create_dir_all(dir)?;
                let mut tmp = tempfile_in(dir)?;
                tmp.1.write_all(bytes)?;
                tmp.1.sync_all()?;
                drop(tmp.1);
                std::fs::rename(&tmp.0, &path)?;
            }
        }
        Ok(AudioAsset {
            episode_id,
            local_path: path,
            content_hash,
            byte_length: bytes.len() as u64,
            media_type: media_type.to_owned(),
        })
    }
}

fn tempfile_in(dir: &Path) -> std::io::Result<(PathBuf, std::fs::File)> {
    let path = dir.join(format!(".partial-{}", uuid::Uuid::new_v4()));
    let file = std::fs::File::create(&path)?;
    Ok((path, file))
}

fn extension_for(media_type: &str, url_path: &str) -> String {
    match media_type {
        "audio/mpeg" => return "mp3".into(),
        "audio/mp4" | "audio/x-m4a" => return "m4a".into(),
        "audio/ogg" => return "ogg".into(),
        _ => {}
    }
    url_path
        .rsplit('/')
        .next()
        .and_then(|name| name.rsplit_once('.'))
        .map(|(_, ext)| ext.to_ascii_lowercase())
        .filter(|ext| !ext.is_empty() && ext.len() <= 5 && ext.chars().all(|c| c.is_ascii_alphanumeric()))
        .unwrap_or_else(|| "bin".into())
}
