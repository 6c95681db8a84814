//! Language-model backends.
//!
//! The engine only needs "text in, text out". [`ScriptedBackend`] replays
//! rules from a script file for offline, reproducible runs;
//! [`RemoteChatBackend`] talks to a chat-completions-style HTTP endpoint.
//! Either can be swapped in without touching the rest of the engine.

mod remote;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use remote::{ChatMessage, ChatRequest, RemoteChatBackend, RemoteChatConfig};
pub use scripted::{load_script, parse_script, Matcher, ScriptError, ScriptedBackend, ScriptedRule};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("no scripted rule matched call {call}")]
    NoRuleMatched { call: usize },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response: {0}")]
    BadResponse(String),
    #[error("empty model input")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentRole {
    System,
    User,
    Assistant,
}

impl SegmentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentRole::System => "system",
            SegmentRole::User => "user",
            SegmentRole::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub role: SegmentRole,
    pub text: String,
}

/// Model input: the instruction prefix as a system segment, followed by the
/// dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmInput {
    segments: Vec<Segment>,
}

impl LlmInput {
    pub fn new(system: impl Into<String>) -> Self {
        Self {
            segments: vec![Segment {
                role: SegmentRole::System,
                text: system.into(),
            }],
        }
    }

    pub fn push(&mut self, role: SegmentRole, text: impl Into<String>) {
        self.segments.push(Segment { role, text: text.into() });
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Everything after the leading system prefix.
    pub fn dialogue(&self) -> &[Segment] {
        &self.segments[1..]
    }

    /// Flat transcript, used for digests and for display.
    pub fn to_text(&self) -> String {
        self.segments
            .iter()
            .map(|s| format!("[{}]\n{}", s.role.as_str(), s.text))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// A text-completion backend. Implementations are shared between sessions.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, input: &LlmInput) -> Result<String, LlmError>;
}
