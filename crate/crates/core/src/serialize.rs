//! Turning structured expert output into observation text.
//!
//! Wording of every fixed sentence lives in the constants below and is
//! reproduced in `docs/observation-format.md`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experts::{Detection, FrameCaption, RawExpertOutput, ReceiptFields, Tag};

pub const OBSERVATION_HEADER_PREFIX: &str = "Observation from ";
pub const DETECTION_EXPLANATION: &str = "Each box is written as <label, x1, y1, x2, y2> in pixel coordinates, \
with (x1, y1) the top-left corner and (x2, y2) the bottom-right corner.";
pub const NO_DETECTIONS: &str = "no objects detected";
pub const NO_TAGS: &str = "no confident tags";
pub const NO_FIELDS: &str = "no fields extracted";
pub const NO_TEXT: &str = "no text found";
pub const NO_FRAMES: &str = "no frames described";
pub const EMPTY_OUTPUT: &str = "the expert returned no output";
pub const DEFAULT_TAG_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SerializeError {
    #[error("no serializer for output kind {0:?}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub expert_name: String,
    pub text: String,
    pub source_payload: RawExpertOutput,
    pub duration_ms: u64,
}

pub fn observation_header(expert_name: &str) -> String {
    format!("{OBSERVATION_HEADER_PREFIX}{expert_name}:")
}

pub fn serialize_detections(boxes: &[Detection]) -> String {
    let mut out = String::from(DETECTION_EXPLANATION);
    if boxes.is_empty() {
        out.push('\n');
        out.push_str(NO_DETECTIONS);
    }
    for b in boxes {
        out.push_str(&format!("\n<{}, {}, {}, {}, {}>", b.label, b.x1, b.y1, b.x2, b.y2));
    }
    out
}

/// Inverse of [`serialize_detections`]. Lines that are not boxes (the
/// explanation, an observation header, the empty marker) are skipped.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>, String> {
    let mut boxes = Vec::new();
    for line in text.lines() {
        let Some(inner) = line.strip_prefix('<').and_then(|l| l.strip_suffix('>')) else {
            continue;
        };
        let fields: Vec<&str> = inner.rsplitn(5, ", ").collect();
        let [y2, x2, y1, x1, label] = fields.as_slice() else {
            return Err(format!("expected 5 fields in {line:?}"));
        };
        let num = |s: &str| s.parse::<u32>().map_err(|e| format!("bad coordinate {s:?} in {line:?}: {e}"));
        boxes.push(Detection {
            label: label.to_string(),
            x1: num(x1)?,
            y1: num(y1)?,
            x2: num(x2)?,
            y2: num(y2)?,
        });
    }
    Ok(boxes)
}

/// Tags at or above `threshold`, highest confidence first, ties by name.
pub fn serialize_tags(tags: &[Tag], threshold: f64) -> String {
    let mut kept: Vec<&Tag> = tags.iter().filter(|t| t.confidence >= threshold).collect();
    if kept.is_empty() {
        return NO_TAGS.to_string();
    }
    kept.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then_with(|| a.tag.cmp(&b.tag)));
    kept.iter().map(|t| t.tag.as_str()).collect::<Vec<_>>().join(", ")
}

pub fn serialize_receipt(fields: &ReceiptFields) -> String {
    let mut lines = Vec::new();
    for (key, value) in [("merchant", &fields.merchant), ("date", &fields.date), ("total", &fields.total)] {
        if let Some(v) = value {
            lines.push(format!("{key}: {v}"));
        }
    }
    if !fields.line_items.is_empty() {
        lines.push("line_items:".to_string());
        lines.extend(fields.line_items.iter().map(|i| format!("  - {}: {}", i.name, i.amount)));
    }
    if lines.is_empty() {
        NO_FIELDS.to_string()
    } else {
        lines.join("\n")
    }
}

pub fn serialize_key_values(fields: &BTreeMap<String, String>) -> String {
    if fields.is_empty() {
        return NO_FIELDS.to_string();
    }
    fields.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join("\n")
}

pub fn serialize_frame_captions(frames: &[FrameCaption]) -> String {
    if frames.is_empty() {
        return NO_FRAMES.to_string();
    }
    frames
        .iter()
        .map(|f| format!("at {}s: {}", f.timestamp_seconds, f.caption))
        .collect::<Vec<_>>()
        .join("\n")
}

fn non_empty_or(text: String, fallback: &str) -> String {
    if text.trim().is_empty() {
        fallback.to_string()
    } else {
        text
    }
}

/// Body text for a payload, without the observation header.
pub fn serialize_payload(payload: &RawExpertOutput, tag_threshold: f64) -> Result<String, SerializeError> {
    Ok(match payload {
        RawExpertOutput::PlainText(t) => non_empty_or(t.clone(), EMPTY_OUTPUT),
        RawExpertOutput::Tags(tags) => serialize_tags(tags, tag_threshold),
        RawExpertOutput::Detections(boxes) => serialize_detections(boxes),
        RawExpertOutput::OcrLines(lines) => non_empty_or(lines.join("\n"), NO_TEXT),
        RawExpertOutput::ReceiptFields(fields) => serialize_receipt(fields),
        RawExpertOutput::KeyValues(fields) => serialize_key_values(fields),
        RawExpertOutput::FrameCaptions(frames) => serialize_frame_captions(frames),
        RawExpertOutput::Unknown { kind, .. } => return Err(SerializeError::UnknownKind(kind.clone())),
    })
}

pub fn standardize(
    expert_name: &str,
    payload: RawExpertOutput,
    duration_ms: u64,
    tag_threshold: f64,
) -> Result<Observation, SerializeError> {
    let body = serialize_payload(&payload, tag_threshold)?;
    Ok(Observation {
        expert_name: expert_name.to_string(),
        text: format!("{}\n{body}", observation_header(expert_name)),
        source_payload: payload,
        duration_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::LineItem;

    fn tag(t: &str, c: f64) -> Tag {
        Tag {
            tag: t.into(),
            confidence: c,
        }
    }

    #[test]
    fn single_box() {
        let s = serialize_detections(&[Detection::new("person", 10, 20, 110, 220)]);
        assert_eq!(s, format!("{DETECTION_EXPLANATION}\n<person, 10, 20, 110, 220>"));
    }

    #[test]
    fn empty_boxes() {
        assert_eq!(serialize_detections(&[]), format!("{DETECTION_EXPLANATION}\n{NO_DETECTIONS}"));
        assert_eq!(parse_detections(&serialize_detections(&[])).unwrap(), vec![]);
    }

    #[test]
    fn two_boxes_keep_order() {
        let boxes = vec![Detection::new("dog", 5, 5, 50, 40), Detection::new("cat", 1, 2, 3, 4)];
        let s = serialize_detections(&boxes);
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines[1], "<dog, 5, 5, 50, 40>");
        assert_eq!(lines[2], "<cat, 1, 2, 3, 4>");
        assert_eq!(parse_detections(&s).unwrap(), boxes);
    }

    #[test]
    fn tags_threshold_and_ties() {
        assert_eq!(serialize_tags(&[tag("dog", 0.9), tag("grass", 0.4)], 0.5), "dog");
        assert_eq!(serialize_tags(&[tag("b", 0.8), tag("a", 0.8)], 0.5), "a, b");
        assert_eq!(serialize_tags(&[tag("x", 0.1)], 0.5), NO_TAGS);
        assert_eq!(serialize_tags(&[tag("low", 0.6), tag("high", 0.95)], 0.5), "high, low");
    }

    #[test]
    fn key_values_layout() {
        let map: BTreeMap<String, String> = [("total", "12.05"), ("merchant", "CityCab")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        assert_eq!(serialize_key_values(&map), "merchant: CityCab\ntotal: 12.05");
        assert_eq!(serialize_key_values(&BTreeMap::new()), NO_FIELDS);

        let receipt = ReceiptFields {
            merchant: Some("CityCab".into()),
            date: None,
            total: Some("12.05".into()),
            line_items: vec![LineItem {
                name: "fare".into(),
                amount: "10.00".into(),
            }],
        };
        assert_eq!(
            serialize_receipt(&receipt),
            "merchant: CityCab\ntotal: 12.05\nline_items:\n  - fare: 10.00"
        );
        assert_eq!(serialize_receipt(&ReceiptFields::default()), NO_FIELDS);
    }

    #[test]
    fn standardize_dispatch() {
        let obs = standardize(
            "detection",
            RawExpertOutput::Detections(vec![Detection::new("person", 10, 20, 110, 220)]),
            3,
            DEFAULT_TAG_THRESHOLD,
        )
        .unwrap();
        let mut lines = obs.text.lines();
        assert_eq!(lines.next(), Some("Observation from detection:"));
        assert_eq!(lines.next(), Some(DETECTION_EXPLANATION));
        assert_eq!(obs.duration_ms, 3);
    }

    #[test]
    fn frame_captions() {
        let obs = standardize(
            "video_captioning",
            RawExpertOutput::FrameCaptions(vec![
                FrameCaption {
                    timestamp_seconds: 0,
                    caption: "intro".into(),
                },
                FrameCaption {
                    timestamp_seconds: 30,
                    caption: "goal".into(),
                },
            ]),
            0,
            DEFAULT_TAG_THRESHOLD,
        )
        .unwrap();
        assert_eq!(obs.text, "Observation from video_captioning:\nat 0s: intro\nat 30s: goal");
    }

    #[test]
    fn unknown_kind() {
        let err = standardize(
            "depth",
            RawExpertOutput::Unknown {
                kind: "depth_map".into(),
                payload: serde_json::Value::Null,
            },
            0,
            DEFAULT_TAG_THRESHOLD,
        )
        .unwrap_err();
        assert_eq!(err, SerializeError::UnknownKind("depth_map".into()));
    }

    #[test]
    fn empty_plain_text_still_non_empty() {
        let obs = standardize("captioning", RawExpertOutput::PlainText(String::new()), 0, 0.5).unwrap();
        assert!(obs.text.ends_with(EMPTY_OUTPUT));
    }
}
