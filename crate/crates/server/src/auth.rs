use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use axum::extract::{Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use parking_lot::Mutex;
use podfact_core::AnnotatorId;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::AppState;

pub const EXPORTER_ROLE: &str = "exporter";

/// The authenticated caller, attached to each request as an extension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub annotator_id: AnnotatorId,
    #[serde(default = "default_locale")]
    pub locale: String,
    #[serde(default)]
    pub roles: Vec<String>,
}

impl Session {
    pub fn has_role(&self, role: &str) -> bool {
        self.roles.iter().any(|r| r == role)
    }
}

fn default_locale() -> String {
    "en".to_owned()
}

#[derive(Debug, Deserialize)]
struct RegistryEntry {
    token: String,
    #[serde(flatten)]
    session: Session,
}

#[derive(Debug, Deserialize)]
struct RegistryFile {
    annotators: Vec<RegistryEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("cannot read registry {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed registry: {0}")]
    Json(#[from] serde_json::Error),
    #[error("token for {0} is empty")]
    EmptyToken(AnnotatorId),
    #[error("a token is shared by {0} and {1}")]
    DuplicateToken(AnnotatorId, AnnotatorId),
}

/// Static token-to-annotator map, loaded from
/// `{"annotators": [{"annotator_id", "token", "locale", "roles"}]}`.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    by_token: HashMap<String, Session>,
}

impl Registry {
    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let file: RegistryFile = serde_json::from_str(text)?;
        let mut registry = Self::default();
        for entry in file.annotators {
            registry.insert(entry.token, entry.session)?;
        }
        Ok(registry)
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn insert(&mut self, token: impl Into<String>, session: Session) -> Result<(), RegistryError> {
        let token = token.into();
        if token.is_empty() {
            return Err(RegistryError::EmptyToken(session.annotator_id));
        }
        if let Some(existing) = self.by_token.get(&token) {
            return Err(RegistryError::DuplicateToken(
                existing.annotator_id.clone(),
                session.annotator_id,
            ));
        }
        self.by_token.insert(token, session);
        Ok(())
    }

    pub fn session(&self, token: &str) -> Option<&Session> {
        self.by_token.get(token)
    }

    pub fn len(&self) -> usize {
        self.by_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_token.is_empty()
    }
}

/// Fixed-window request cap per token.
#[derive(Debug)]
pub struct RateCap {
    limit: u32,
    window: Duration,
    counters: Mutex<HashMap<String, (Instant, u32)>>,
}

impl RateCap {
    pub fn new(limit: u32, window: Duration) -> Self {
        Self {
            limit,
            window,
            counters: Mutex::default(),
        }
    }

    /// `Err(retry_after)` once the token has used up its window.
    pub fn check(&self, token: &str, now: Instant) -> Result<(), Duration> {
        let mut counters = self.counters.lock();
        let slot = counters.entry(token.to_owned()).or_insert((now, 0));
        if now.duration_since(slot.0) >= self.window {
            *slot = (now, 0);
        }
        if slot.1 >= self.limit {
            return Err(self.window.saturating_sub(now.duration_since(slot.0)));
        }
        slot.1 += 1;
        Ok(())
    }
}

fn bearer(request: &Request) -> Option<&str> {
    let value = request.headers().get(header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    scheme.eq_ignore_ascii_case("bearer").then(|| token.trim())
}

pub async fn authenticate(State(state): State<AppState>, mut request: Request, next: Next) -> Response {
    let Some(token) = bearer(&request).map(str::to_owned) else {
        return ApiError::unauthorized().into_response();
    };
    let Some(session) = state.registry.session(&token).cloned() else {
        return ApiError::unauthorized().into_response();
    };
    if let Some(cap) = &state.rate_cap {
        if let Err(wait) = cap.check(&token, Instant::now()) {
            let mut response = ApiError::new(
                StatusCode::TOO_MANY_REQUESTS,
                "rate_limited",
                "request cap for this token reached",
            )
            .into_response();
            response.headers_mut().insert(
                header::RETRY_AFTER,
                header::HeaderValue::from(wait.as_secs().max(1)),
            );
            return response;
        }
    }
    request.extensions_mut().insert(session);
    next.run(request).await
}
