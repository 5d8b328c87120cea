//! Replay of POST responses keyed by the `Idempotency-Key` header.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{HeaderMap, Method, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use parking_lot::Mutex;

use crate::auth::Session;
use crate::error::ApiError;
use crate::AppState;

pub const HEADER: &str = "idempotency-key";
const MAX_BODY: usize = 4 << 20;

#[derive(Debug, Clone)]
struct Stored {
    request_body: Bytes,
    status: StatusCode,
    headers: HeaderMap,
    body: Bytes,
}

type Slot = Arc<tokio::sync::Mutex<Option<Stored>>>;
type Key = (String, String, String);

/// Bounded map of (annotator, path, key) to the first response. Eviction is FIFO.
#[derive(Debug)]
pub struct IdempotencyCache {
    capacity: usize,
    inner: Mutex<(HashMap<Key, Slot>, VecDeque<Key>)>,
}

impl IdempotencyCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            inner: Mutex::default(),
        }
    }

    fn slot(&self, key: Key) -> Slot {
        let mut guard = self.inner.lock();
        let (map, order) = &mut *guard;
        if let Some(slot) = map.get(&key) {
            return slot.clone();
        }
        while map.len() >= self.capacity {
            match order.pop_front() {
                Some(old) => {
                    map.remove(&old);
                }
                None => break,
            }
        }
        let slot = Slot::default();
        map.insert(key.clone(), slot.clone());
        order.push_back(key);
        slot
    }
}

fn replay(stored: &Stored) -> Response {
    let mut response = Response::new(Body::from(stored.body.clone()));
    *response.status_mut() = stored.status;
    *response.headers_mut() = stored.headers.clone();
    response
        .headers_mut()
        .insert("idempotent-replay", axum::http::HeaderValue::from_static("true"));
    response
}

pub async fn layer(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if request.method() != Method::POST {
        return next.run(request).await;
    }
    let Some(key) = request.headers().get(HEADER).and_then(|v| v.to_str().ok()).map(str::to_owned) else {
        return next.run(request).await;
    };
    let Some(annotator) = request.extensions().get::<Session>().map(|s| s.annotator_id.to_string()) else {
        return next.run(request).await;
    };
    let path = request.uri().to_string();
    let (parts, body) = request.into_parts();
    let request_body = match axum::body::to_bytes(body, MAX_BODY).await {
        Ok(b) => b,
        Err(e) => return ApiError::bad_request(format!("unreadable body: {e}")).into_response(),
    };

    let slot = state.idempotency.slot((annotator, path, key));
    let mut entry = slot.lock().await;
    if let Some(stored) = entry.as_ref() {
        if stored.request_body != request_body {
            return ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "idempotency_mismatch",
                "idempotency key reused with a different request body",
            )
            .into_response();
        }
        return replay(stored);
    }

    let response = next
        .run(Request::from_parts(parts, Body::from(request_body.clone())))
        .await;
    // Server failures are not remembered so that a retry can succeed.
    if response.status().is_server_error() {
        return response;
    }
    let (parts, body) = response.into_parts();
    let body = match axum::body::to_bytes(body, MAX_BODY).await {
        Ok(b) => b,
        Err(e) => return ApiError::internal(format!("unreadable response: {e}")).into_response(),
    };
    let stored = Stored {
        request_body,
        status: parts.status,
        headers: parts.headers.clone(),
        body: body.clone(),
    };
    *entry = Some(stored);
    Response::from_parts(parts, Body::from(body))
}
