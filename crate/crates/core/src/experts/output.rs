use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    PlainText,
    Tags,
    Detections,
    OcrLines,
    ReceiptFields,
    KeyValues,
    FrameCaptions,
}

impl OutputKind {
    pub const ALL: [OutputKind; 7] = [
        OutputKind::PlainText,
        OutputKind::Tags,
        OutputKind::Detections,
        OutputKind::OcrLines,
        OutputKind::ReceiptFields,
        OutputKind::KeyValues,
        OutputKind::FrameCaptions,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutputKind::PlainText => "plain_text",
            OutputKind::Tags => "tags",
            OutputKind::Detections => "detections",
            OutputKind::OcrLines => "ocr_lines",
            OutputKind::ReceiptFields => "receipt_fields",
            OutputKind::KeyValues => "key_values",
            OutputKind::FrameCaptions => "frame_captions",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for OutputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tag {
    pub tag: String,
    pub confidence: f64,
}

/// One bounding box in raw pixel coordinates; (x1, y1) is the top-left
/// corner and (x2, y2) the bottom-right corner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl Detection {
    pub fn new(label: impl Into<String>, x1: u32, y1: u32, x2: u32, y2: u32) -> Self {
        Self {
            label: label.into(),
            x1,
            y1,
            x2,
            y2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineItem {
    pub name: String,
    pub amount: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiptFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merchant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub line_items: Vec<LineItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCaption {
    pub timestamp_seconds: u64,
    pub caption: String,
}

/// Structured output of one expert invocation, discriminated by kind.
///
/// On the wire this is `{"kind": "<output kind>", "payload": ...}`. Kinds
/// this build does not know survive deserialisation as [`RawExpertOutput::Unknown`]
/// so the serializer can report them instead of the transport layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WireOutput", into = "WireOutput")]
pub enum RawExpertOutput {
    PlainText(String),
    Tags(Vec<Tag>),
    Detections(Vec<Detection>),
    OcrLines(Vec<String>),
    ReceiptFields(ReceiptFields),
    KeyValues(BTreeMap<String, String>),
    FrameCaptions(Vec<FrameCaption>),
    Unknown { kind: String, payload: serde_json::Value },
}

impl RawExpertOutput {
    /// `None` for payloads of an unrecognised kind.
    pub fn kind(&self) -> Option<OutputKind> {
        Some(match self {
            RawExpertOutput::PlainText(_) => OutputKind::PlainText,
            RawExpertOutput::Tags(_) => OutputKind::Tags,
            RawExpertOutput::Detections(_) => OutputKind::Detections,
            RawExpertOutput::OcrLines(_) => OutputKind::OcrLines,
            RawExpertOutput::ReceiptFields(_) => OutputKind::ReceiptFields,
            RawExpertOutput::KeyValues(_) => OutputKind::KeyValues,
            RawExpertOutput::FrameCaptions(_) => OutputKind::FrameCaptions,
            RawExpertOutput::Unknown { .. } => return None,
        })
    }

    pub fn kind_name(&self) -> &str {
        match self {
            RawExpertOutput::Unknown { kind, .. } => kind,
            other => other.kind().expect("known kind").as_str(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            RawExpertOutput::Detections(boxes) => {
                for d in boxes {
                    if d.x1 >= d.x2 || d.y1 >= d.y2 {
                        return Err(format!(
                            "detection {:?} needs x1<x2 and y1<y2, got ({}, {}, {}, {})",
                            d.label, d.x1, d.y1, d.x2, d.y2
                        ));
                    }
                }
                Ok(())
            }
            RawExpertOutput::Tags(tags) => {
                for t in tags {
                    if !(0.0..=1.0).contains(&t.confidence) {
                        return Err(format!(
                            "tag {:?} has confidence {} outside [0, 1]",
                            t.tag, t.confidence
                        ));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WireOutput {
    kind: String,
    payload: serde_json::Value,
}

impl TryFrom<WireOutput> for RawExpertOutput {
    type Error = String;

    fn try_from(wire: WireOutput) -> Result<Self, Self::Error> {
        fn de<T: serde::de::DeserializeOwned>(v: serde_json::Value, kind: &str) -> Result<T, String> {
            serde_json::from_value(v).map_err(|e| format!("bad {kind} payload: {e}"))
        }
        let kind = wire.kind.as_str();
        let out = match OutputKind::parse(kind) {
            Some(OutputKind::PlainText) => RawExpertOutput::PlainText(de(wire.payload, kind)?),
            Some(OutputKind::Tags) => RawExpertOutput::Tags(de(wire.payload, kind)?),
            Some(OutputKind::Detections) => RawExpertOutput::Detections(de(wire.payload, kind)?),
            Some(OutputKind::OcrLines) => RawExpertOutput::OcrLines(de(wire.payload, kind)?),
            Some(OutputKind::ReceiptFields) => RawExpertOutput::ReceiptFields(de(wire.payload, kind)?),
            Some(OutputKind::KeyValues) => RawExpertOutput::KeyValues(de(wire.payload, kind)?),
            Some(OutputKind::FrameCaptions) => RawExpertOutput::FrameCaptions(de(wire.payload, kind)?),
            None => RawExpertOutput::Unknown {
                kind: wire.kind,
                payload: wire.payload,
            },
        };
        out.validate()?;
        Ok(out)
    }
}

impl From<RawExpertOutput> for WireOutput {
    fn from(out: RawExpertOutput) -> Self {
        fn ser<T: Serialize>(v: T) -> serde_json::Value {
            serde_json::to_value(v).expect("payload types serialize infallibly")
        }
        let kind = out.kind_name().to_string();
        let payload = match out {
            RawExpertOutput::PlainText(v) => ser(v),
            RawExpertOutput::Tags(v) => ser(v),
            RawExpertOutput::Detections(v) => ser(v),
            RawExpertOutput::OcrLines(v) => ser(v),
            RawExpertOutput::ReceiptFields(v) => ser(v),
            RawExpertOutput::KeyValues(v) => ser(v),
            RawExpertOutput::FrameCaptions(v) => ser(v),
            RawExpertOutput::Unknown { payload, .. } => payload,
        };
        WireOutput { kind, payload }
    }
}
