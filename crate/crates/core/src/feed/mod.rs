//! RSS 2.0 podcast feeds and the episode audio they point at.

mod assets;
mod ingest;

use std::collections::HashSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use url::Url;

use crate::ids::{digest_id, EpisodeId, PodcastId};
use crate::Checked;

pub use assets::{AssetStore, AudioAsset, FetchError};
pub use ingest::{fetch_feed, ingest, IngestError, IngestReport};

const ITUNES_NS: &str = "http://www.itunes.com/dtds/podcast-1.0.dtd";
const ATOM_NS: &str = "http://www.w3.org/2005/Atom";

/// Media types the player is known to handle. Anything else is kept with a warning.
pub const ACCEPTED_MEDIA_TYPES: [&str; 4] = ["audio/mpeg", "audio/mp4", "audio/x-m4a", "audio/ogg"];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FeedError {
    #[error("feed parse error: {0}")]
    Parse(String),
    #[error("feed has no items with a usable enclosure")]
    EmptyFeed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    NewsAndPolitics,
    HealthAndWellness,
    Other,
}

impl Category {
    pub const ALL: [Category; 3] = [
        Category::NewsAndPolitics,
        Category::HealthAndWellness,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::NewsAndPolitics => "NEWS_AND_POLITICS",
            Category::HealthAndWellness => "HEALTH_AND_WELLNESS",
            Category::Other => "OTHER",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Maps free-form iTunes/RSS category text onto the two tracked topics.
    pub fn from_feed_label(label: &str) -> Option<Self> {
        let label = label.to_lowercase();
        if label.contains("news") || label.contains("politic") {
            Some(Category::NewsAndPolitics)
        } else if label.contains("health") || label.contains("wellness") || label.contains("fitness")
        {
            Some(Category::HealthAndWellness)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodcastFeed {
    pub podcast_id: PodcastId,
    pub title: String,
    pub category: Category,
    pub language: String,
    /// Newest first; episodes without a publication date come last.
    pub episodes: Vec<Episode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: EpisodeId,
    pub guid: String,
    pub title: String,
    pub publication_date: Option<DateTime<Utc>>,
    pub audio_url: Url,
    pub media_type: Option<String>,
    pub duration_s: Option<f64>,
}

/// Parses an RSS 2.0 document. Items without an enclosure are skipped with a warning.
pub fn parse_feed(xml: &str) -> Result<Checked<PodcastFeed>, FeedError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| FeedError::Parse(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "rss" {
        return Err(FeedError::Parse(format!(
            "expected <rss> root element, found <{}>",
            root.tag_name().name()
        )));
    }
    let channel = child(root, "channel").ok_or_else(|| FeedError::Parse("missing <channel>".into()))?;
    let title = child_text(channel, "title")
        .filter(|t| !t.is_empty())
        .ok_or_else(|| FeedError::Parse("missing channel <title>".into()))?;

    let self_link = channel
        .children()
        .find(|n| {
            n.tag_name().name() == "link"
                && n.tag_name().namespace() == Some(ATOM_NS)
                && n.attribute("rel") == Some("self")
        })
        .and_then(|n| n.attribute("href"));
    let identity = self_link
        .map(str::to_owned)
        .or_else(|| child_text(channel, "link").filter(|l| !l.is_empty()))
        .unwrap_or_else(|| title.clone());
    let podcast_id = PodcastId::new(format!("pod-{}", digest_id(&[&identity], 16)));

    let language = child_text(channel, "language")
        .filter(|l| !l.is_empty())
        .unwrap_or_else(|| "und".to_owned());
    let category = channel_category(channel).unwrap_or(Category::Other);

    let mut out = Checked::new(PodcastFeed {
        podcast_id: podcast_id.clone(),
        title,
        category,
        language,
        episodes: Vec::new(),
    });

    let mut seen = HashSet::new();
    for (position, item) in channel
        .children()
        .filter(|n| n.is_element() && n.tag_name().name() == "item" && n.tag_name().namespace().is_none())
        .enumerate()
    {
        let label = child_text(item, "title").unwrap_or_else(|| format!("item #{position}"));
        let Some(enclosure) = child(item, "enclosure") else {
            out.warn(format!("skipping '{label}': no enclosure"));
            continue;
        };
        let Some(raw_url) = enclosure.attribute("url").map(str::trim) else {
            out.warn(format!("skipping '{label}': enclosure without url"));
            continue;
        };
        let audio_url = match Url::parse(raw_url) {
            Ok(u) if u.has_host() => u,
            _ => {
                out.warn(format!("skipping '{label}': invalid enclosure url {raw_url:?}"));
                continue;
            }
        };
        let guid = match child_text(item, "guid").filter(|g| !g.is_empty()) {
            Some(g) => g,
            None => {
                out.warn(format!("'{label}' has no guid; using enclosure url"));
                audio_url.to_string()
            }
        };
        if !seen.insert(guid.clone()) {
            out.warn(format!("duplicate guid {guid:?}; keeping first occurrence"));
            continue;
        }
        let media_type = enclosure.attribute("type").map(|t| t.trim().to_lowercase());
        match media_type.as_deref() {
            Some(t) if ACCEPTED_MEDIA_TYPES.contains(&t) => {}
            other => out.warn(format!("'{label}' has unusual media type {other:?}")),
        }
        let publication_date = child_text(item, "pubDate").and_then(|d| parse_date(&d));
        if publication_date.is_none() {
            out.warn(format!("'{label}' has no parseable pubDate; sorting last"));
        }
        let duration_s = item
            .children()
            .find(|n| n.tag_name().name() == "duration" && n.tag_name().namespace() == Some(ITUNES_NS))
            .and_then(|n| n.text())
            .and_then(parse_duration);

        out.value.episodes.push(Episode {
            episode_id: EpisodeId::new(format!("ep-{}", digest_id(&[podcast_id.as_str(), &guid], 16))),
            guid,
            title: label,
            publication_date,
            audio_url,
            media_type,
            duration_s,
        });
    }

    if out.value.episodes.is_empty() {
        return Err(FeedError::EmptyFeed);
    }
    // Stable sort keeps document order among equal dates.
    out.value
        .episodes
        .sort_by(|a, b| match (a.publication_date, b.publication_date) {
            (Some(x), Some(y)) => y.cmp(&x),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        });
    Ok(out)
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children()
        .find(|n| n.is_element() && n.tag_name().name() == name && n.tag_name().namespace().is_none())
}

fn child_text(node: roxmltree::Node<'_, '_>, name: &str) -> Option<String> {
    child(node, name).map(|n| {
        n.descendants()
            .filter(|d| d.is_text())
            .filter_map(|d| d.text())
            .collect::<String>()
            .trim()
            .to_owned()
    })
}

fn channel_category(channel: roxmltree::Node<'_, '_>) -> Option<Category> {
    let labels = channel.descendants().filter_map(|n| match n.tag_name().name() {
        "category" if n.tag_name().namespace() == Some(ITUNES_NS) => n.attribute("text").map(str::to_owned),
        "category" if n.tag_name().namespace().is_none() && n.parent() == Some(channel) => {
            n.text().map(str::to_owned)
        }
        _ => None,
    });
    labels.into_iter().find_map(|l| Category::from_feed_label(&l))
}

fn parse_date(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    DateTime::parse_from_rfc2822(raw)
        .or_else(|_| DateTime::parse_from_rfc3339(raw))
        .ok()
        .map(|d| d.with_timezone(&Utc))
}

/// Accepts `SS`, `MM:SS` and `HH:MM:SS`.
fn parse_duration(raw: &str) -> Option<f64> {
    let mut total = 0.0;
    let parts: Vec<&str> = raw.trim().split(':').collect();
    if parts.is_empty() || parts.len() > 3 {
        return None;
    }
    for part in parts {
        let v: f64 = part.trim().parse().ok()?;
        if !(v >= 0.0) {
            return None;
        }
        total = total * 60.0 + v;
    }
    Some(total)
}
