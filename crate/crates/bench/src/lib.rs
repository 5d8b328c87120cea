//! Input generators shared by the benchmarks.

use chrono::{TimeZone, Utc};
use podfact_core::annotation::{Annotation, AnnotationPayload, CheckworthyLabel, ClaimType, Motivation};
use podfact_core::synth::random_transcript;
use podfact_core::{AnnotationId, AnnotatorId, TaskId, UtteranceId};

/// Reference and hypothesis texts of about `n_words` words each.
pub fn text_pair(seed: u64, n_words: usize) -> (String, String) {
    let t = random_transcript(seed, n_words);
    let reference: Vec<&str> = t.words.iter().map(|w| w.text.as_str()).collect();
    // Drop every 7th word and double every 11th.
    let mut hypothesis = Vec::with_capacity(reference.len());
    for (i, w) in reference.iter().enumerate() {
        if i % 7 == 3 {
            continue;
        }
        hypothesis.push(*w);
        if i % 11 == 5 {
            hypothesis.push(*w);
        }
    }
    (reference.join(" "), hypothesis.join(" "))
}

/// An RSS document with `items` episodes.
pub fn feed_xml(items: usize) -> String {
    let mut xml = String::from(
        r#"<?xml version="1.0" encoding="UTF-8"?>
<rss version="2.0" xmlns:itunes="http://www.itunes.com/dtds/podcast-1.0.dtd">
<channel><title>Bench Radio</title><language>en</language>
<itunes:category text="News"/>
"#,
    );
    for i in 0..items {
        xml.push_str(&format!(
            "<item><guid>bench-{i:05}</guid><title>Episode {i}</title>\
             <pubDate>Mon, 0{} Jan 2024 10:00:00 +0000</pubDate>\
             <itunes:duration>{}:{:02}:00</itunes:duration>\
             <enclosure url=\"https://media.example.org/{i}.mp3\" length=\"1000\" type=\"audio/mpeg\"/></item>\n",
            1 + i % 9,
            i % 3,
            i % 60
        ));
    }
    xml.push_str("</channel></rss>\n");
    xml
}

/// Three annotations of one utterance; `agree` makes them unanimous.
pub fn triple(agree: bool) -> (UtteranceId, Vec<Annotation>) {
    let utterance_id = UtteranceId::new("bench-u00000");
    let at = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let annotations = (0..3)
        .map(|k| {
            let label = if agree || k < 2 {
                CheckworthyLabel::CheckWorthy
            } else {
                CheckworthyLabel::NotCheckWorthy
            };
            let payload = AnnotationPayload {
                utterance_id: utterance_id.clone(),
                label,
                claim_type: (label == CheckworthyLabel::CheckWorthy).then_some(ClaimType::NumericalClaim),
                reason: None,
                motivations: vec![Motivation::PublicInterest, Motivation::PotentialHarm],
                span: None,
                correction: None,
            };
            Annotation::from_payload(
                AnnotationId::new(format!("a{k}")),
                TaskId::new("bench-t001"),
                AnnotatorId::new(format!("ann{k}")),
                payload,
                at,
            )
        })
        .collect();
    (utterance_id, annotations)
}
