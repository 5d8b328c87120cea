use std::io::SeekFrom;
use std::path::PathBuf;

use axum::body::Body;
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use tokio::io::{AsyncReadExt, AsyncSeekExt};
use tokio_util::io::ReaderStream;

use crate::error::ApiError;

/// Outcome of interpreting a `Range` header against a resource length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeRequest {
    Full,
    /// Inclusive byte bounds.
    Partial { start: u64, end: u64 },
    Unsatisfiable,
}

/// Single byte ranges only (`a-b`, `a-`, `-n`). Malformed or multi-range
/// headers are ignored and the whole body is served.
pub fn parse_range(header: Option<&str>, len: u64) -> RangeRequest {
    let Some(spec) = header.and_then(|h| h.trim().strip_prefix("bytes=")) else {
        return RangeRequest::Full;
    };
    if spec.contains(',') {
        return RangeRequest::Full;
    }
    let Some((a, b)) = spec.trim().split_once('-') else {
        return RangeRequest::Full;
    };
    let (a, b) = (a.trim(), b.trim());
    let parsed = match (a.is_empty(), b.is_empty()) {
        (true, true) => return RangeRequest::Full,
        (true, false) => b.parse::<u64>().map(|n| {
            if n == 0 || len == 0 {
                RangeRequest::Unsatisfiable
            } else {
                RangeRequest::Partial {
                    start: len.saturating_sub(n),
                    end: len - 1,
                }
            }
        }),
        (false, _) => a.parse::<u64>().and_then(|start| {
            let end = if b.is_empty() { Ok(u64::MAX) } else { b.parse::<u64>() };
            end.map(|end| {
                if end < start {
                    RangeRequest::Full
                } else if start >= len {
                    RangeRequest::Unsatisfiable
                } else {
                    RangeRequest::Partial {
                        start,
                        end: end.min(len - 1),
                    }
                }
            })
        }),
    };
    parsed.unwrap_or(RangeRequest::Full)
}

/// Streams `path`, honouring a byte range. `len` is the recorded asset length.
pub async fn serve(path: PathBuf, len: u64, media_type: &str, headers: &HeaderMap) -> Result<Response, ApiError> {
    let range = parse_range(headers.get(header::RANGE).and_then(|v| v.to_str().ok()), len);
    if range == RangeRequest::Unsatisfiable {
        let mut response = StatusCode::RANGE_NOT_SATISFIABLE.into_response();
        let h = response.headers_mut();
        h.insert(header::CONTENT_RANGE, value(format!("bytes */{len}")));
        h.insert(header::ACCEPT_RANGES, HeaderValue::from_static("bytes"));
        return Ok(response);
    }

    let mut file = tokio::fs::File::open(&path)
        .await
        .map_err(|e| ApiError::not_found(format!("audio file {}: {e}", path.display())))?;
    let on_disk = file.metadata().await.map_err(|e| ApiError::internal(e.to_string()))?.len();
    if on_disk != len {
        return Err(ApiError::internal(format!(
            "audio file {} has {on_disk} bytes, expected {len}",
            path.display()
        )));
    }

    let (status, start, count) = match range {
        RangeRequest::Partial { start, end } => (StatusCode::PARTIAL_CONTENT, start, end - start + 1),
        _ => (StatusCode::OK, 0, len),
    };
    if start > 0 {
        file.seek(SeekFrom::Start(start))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?;
    }
    let body = Body::from_stream(ReaderStream::new(file.take(count)));

    let mut response = Response::new(body);
    *response.status_mut() = status;
    let h = response.headers_mut();
    h.insert(header::CONTENT_LENGTH, HeaderValue::from(count));
    h.insert(header::ACCEPT_RANGES, HeaderValue::from_static("bytes"));
    h.insert(
        header::CONTENT_TYPE,
        HeaderValue::from_str(media_type).unwrap_or(HeaderValue::from_static("application/octet-stream")),
    );
    if status == StatusCode::PARTIAL_CONTENT {
        h.insert(
            header::CONTENT_RANGE,
            value(format!("bytes {start}-{}/{len}", start + count - 1)),
        );
    }
    Ok(response)
}

fn value(s: String) -> HeaderValue {
    HeaderValue::from_str(&s).expect("ASCII header")
}

#[cfg(test)]
mod tests {
    use super::RangeRequest::*;
    use super::*;

    #[test]
    fn range_forms() {
        let p = |h: &str| parse_range(Some(h), 4096);
        assert_eq!(parse_range(None, 4096), Full);
        assert_eq!(p("bytes=0-1023"), Partial { start: 0, end: 1023 });
        assert_eq!(p("bytes=4000-"), Partial { start: 4000, end: 4095 });
        assert_eq!(p("bytes=-96"), Partial { start: 4000, end: 4095 });
        assert_eq!(p("bytes=-10000"), Partial { start: 0, end: 4095 });
        assert_eq!(p("bytes=100-99999"), Partial { start: 100, end: 4095 });
        assert_eq!(p("bytes=4096-"), Unsatisfiable);
        assert_eq!(p("bytes=5000-6000"), Unsatisfiable);
        assert_eq!(p("bytes=-0"), Unsatisfiable);
        assert_eq!(p("bytes=9-3"), Full);
        assert_eq!(p("bytes=0-1,5-9"), Full);
        assert_eq!(p("items=0-3"), Full);
        assert_eq!(p("bytes=x-3"), Full);
        assert_eq!(parse_range(Some("bytes=0-"), 0), Unsatisfiable);
    }
}
