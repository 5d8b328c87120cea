//! HTTP API over a podfact store: podcast browsing, utterance pages with word
//! timings, the annotation and fact-check workflow, progress, range-capable
//! audio streaming and dataset export.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::middleware::from_fn_with_state;
use axum::routing::{get, post};
use axum::Router;
use chrono::{DateTime, Utc};
use podfact_core::Store;

pub mod audio;
pub mod auth;
pub mod error;
pub mod idempotency;
pub mod routes;

pub use auth::{RateCap, Registry, RegistryError, Session, EXPORTER_ROLE};
pub use error::ApiError;
pub use idempotency::IdempotencyCache;

type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    /// Base for relative asset paths.
    pub assets_dir: PathBuf,
    pub registry: Arc<Registry>,
    pub idempotency: Arc<IdempotencyCache>,
    pub rate_cap: Option<Arc<RateCap>>,
    clock: Clock,
}

impl AppState {
    pub fn new(store: Arc<Store>, assets_dir: impl Into<PathBuf>, registry: Registry) -> Self {
        Self {
            store,
            assets_dir: assets_dir.into(),
            registry: Arc::new(registry),
            idempotency: Arc::new(IdempotencyCache::new(10_000)),
            rate_cap: None,
            clock: Arc::new(Utc::now),
        }
    }

    pub fn with_rate_cap(mut self, requests: u32, window: Duration) -> Self {
        self.rate_cap = Some(Arc::new(RateCap::new(requests, window)));
        self
    }

    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    pub fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/api/me", get(routes::me))
        .route("/api/podcasts", get(routes::list_podcasts))
        .route("/api/episodes/{id}", get(routes::get_episode))
        .route("/api/episodes/{id}/utterances", get(routes::get_utterances))
        .route("/api/episodes/{id}/progress", get(routes::get_progress))
        .route("/api/episodes/{id}/audio", get(routes::get_audio))
        .route("/api/tasks/{id}/claim", post(routes::claim_task))
        .route("/api/tasks/{id}/annotations", post(routes::post_annotation))
        .route("/api/utterances/{id}/factcheck", post(routes::post_factcheck))
        .route("/api/export/{kind}", get(routes::export))
        // The later layer runs first, so idempotency sees the session.
        .route_layer(from_fn_with_state(state.clone(), idempotency::layer))
        .route_layer(from_fn_with_state(state.clone(), auth::authenticate));
    Router::new()
        .route("/healthz", get(routes::healthz))
        .merge(api)
        .with_state(state)
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    pub db_path: PathBuf,
    pub assets_dir: PathBuf,
    pub registry_path: PathBuf,
    /// Requests per token per minute; `None` disables the cap.
    pub rate_per_minute: Option<u32>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Store(#[from] podfact_core::store::StoreError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("cannot serve on {addr}: {source}")]
    Io { addr: SocketAddr, source: std::io::Error },
}

/// Serves until ctrl-c.
pub async fn run(config: ServerConfig) -> Result<(), ServeError> {
    let store = Arc::new(Store::open(&config.db_path)?);
    let registry = Registry::load(&config.registry_path)?;
    if registry.is_empty() {
        tracing::warn!(path = %config.registry_path.display(), "annotator registry is empty");
    }
    let mut state = AppState::new(store, &config.assets_dir, registry);
    if let Some(n) = config.rate_per_minute {
        state = state.with_rate_cap(n, Duration::from_secs(60));
    }
    let io = |source| ServeError::Io {
        addr: config.addr,
        source,
    };
    let listener = tokio::net::TcpListener::bind(config.addr).await.map_err(io)?;
    tracing::info!(addr = %listener.local_addr().map_err(io)?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await
        .map_err(io)
}
