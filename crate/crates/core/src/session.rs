//! Dialogue-session state: registered media, the message log, and the
//! visibility rules that separate what the user sees from the reasoning
//! that happens behind the scene.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

/// Smallest context budget a session may be configured with.
pub const MIN_TOKEN_BUDGET: u32 = 256;
/// Upper bound on `max_steps`; anything larger is almost certainly a typo.
pub const MAX_STEPS_LIMIT: u32 = 1000;

pub const DEFAULT_MAX_STEPS: u32 = 10;
pub const DEFAULT_TOKEN_BUDGET: u32 = 4096;
pub const DEFAULT_RESERVED_FOR_COMPLETION: u32 = 512;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("media path must not be empty")]
    EmptyPath,
    #[error("duplicate path: {0} is already registered in this session")]
    DuplicatePath(String),
    #[error("dangling media reference: {0}")]
    DanglingMedia(MediaId),
    #[error("invalid message: {0}")]
    InvalidMessage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub max_steps: u32,
    pub token_budget: u32,
    #[serde(default = "default_reserved")]
    pub reserved_for_completion: u32,
}

fn default_reserved() -> u32 {
    DEFAULT_RESERVED_FOR_COMPLETION
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            token_budget: DEFAULT_TOKEN_BUDGET,
            reserved_for_completion: DEFAULT_RESERVED_FOR_COMPLETION,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.max_steps == 0 || self.max_steps > MAX_STEPS_LIMIT {
            return Err(SessionError::InvalidConfig(format!(
                "max_steps must be in 1..={MAX_STEPS_LIMIT}, got {}",
                self.max_steps
            )));
        }
        if self.token_budget < MIN_TOKEN_BUDGET {
            return Err(SessionError::InvalidConfig(format!(
                "token budget must be at least {MIN_TOKEN_BUDGET}, got {}",
                self.token_budget
            )));
        }
        if self.reserved_for_completion == 0 || self.reserved_for_completion >= self.token_budget {
            return Err(SessionError::InvalidConfig(format!(
                "reserved_for_completion must be in 1..{}, got {}",
                self.token_budget, self.reserved_for_completion
            )));
        }
        Ok(())
    }
}

/// Opaque media identifier, unique within a session.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MediaId(pub String);

impl fmt::Display for MediaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    Image,
    Video,
}

impl MediaKind {
    /// Guess the kind from a file extension; anything unrecognised is an image.
    pub fn from_path(path: &str) -> Self {
        let ext = path
            .rsplit('/')
            .next()
            .and_then(|name| name.rsplit_once('.'))
            .map(|(_, ext)| ext.to_ascii_lowercase());
        match ext.as_deref() {
            Some("mp4" | "mov" | "avi" | "webm" | "mkv" | "m4v") => MediaKind::Video,
            _ => MediaKind::Image,
        }
    }
}

impl fmt::Display for MediaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MediaKind::Image => "image",
            MediaKind::Video => "video",
        })
    }
}

impl std::str::FromStr for MediaKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "image" => Ok(MediaKind::Image),
            "video" => Ok(MediaKind::Video),
            other => Err(format!("unknown media kind {other:?}")),
        }
    }
}

/// A non-text input, represented to the language model only by its path
/// string. The path is never opened or canonicalised here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaHandle {
    pub id: MediaId,
    pub kind: MediaKind,
    pub path: String,
    pub display_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    AssistantFinal,
    Thought,
    ActionRequest,
    Observation,
    System,
}

impl Role {
    pub fn is_user_visible(self) -> bool {
        matches!(self, Role::User | Role::AssistantFinal)
    }

    /// Roles produced inside the reasoning loop; these always carry a step.
    pub fn is_internal(self) -> bool {
        matches!(self, Role::Thought | Role::ActionRequest | Role::Observation)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub media: Vec<MediaId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u32>,
    /// Logical monotonic timestamp, assigned by the session on append.
    #[serde(default)]
    pub timestamp: u64,
}

impl Message {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
            media: Vec::new(),
            step: None,
            timestamp: 0,
        }
    }

    pub fn user(text: impl Into<String>, media: Vec<MediaId>) -> Self {
        Self {
            media,
            ..Self::new(Role::User, text)
        }
    }

    pub fn assistant_final(text: impl Into<String>) -> Self {
        Self::new(Role::AssistantFinal, text)
    }

    pub fn internal(role: Role, text: impl Into<String>, step: u32) -> Self {
        Self {
            step: Some(step),
            ..Self::new(role, text)
        }
    }

    fn check(&self) -> Result<(), SessionError> {
        if self.text.is_empty() && !(self.role == Role::User && !self.media.is_empty()) {
            return Err(SessionError::InvalidMessage(format!(
                "{:?} message has empty text",
                self.role
            )));
        }
        match (self.role.is_internal(), self.step) {
            (true, None) => Err(SessionError::InvalidMessage(format!(
                "{:?} message requires a step",
                self.role
            ))),
            (false, Some(_)) => Err(SessionError::InvalidMessage(format!(
                "{:?} message must not carry a step",
                self.role
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub config: SessionConfig,
    messages: Vec<Message>,
    media: BTreeMap<MediaId, MediaHandle>,
    /// Registration order of media ids; the map alone is keyed by id.
    media_order: Vec<MediaId>,
    pub turn_counter: u64,
    clock: u64,
}

/// Create an empty session with a fresh id.
pub fn new_session(config: SessionConfig) -> Result<SessionState, SessionError> {
    SessionState::new(config)
}

impl SessionState {
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        Self::with_id(Uuid::new_v4().simple().to_string(), config)
    }

    /// Create a session with a caller-chosen id (used when replaying persisted records).
    pub fn with_id(session_id: impl Into<String>, config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        Ok(Self {
            session_id: session_id.into(),
            config,
            messages: Vec::new(),
            media: BTreeMap::new(),
            media_order: Vec::new(),
            turn_counter: 0,
            clock: 0,
        })
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn media(&self, id: &MediaId) -> Option<&MediaHandle> {
        self.media.get(id)
    }

    /// Media handles in registration order.
    pub fn media_handles(&self) -> impl Iterator<Item = &MediaHandle> {
        self.media_order.iter().filter_map(|id| self.media.get(id))
    }

    pub fn media_count(&self) -> usize {
        self.media.len()
    }

    pub fn media_by_path(&self, path: &str) -> Option<&MediaHandle> {
        self.media.values().find(|h| h.path == path)
    }

    pub fn known_paths(&self) -> Vec<String> {
        self.media_handles().map(|h| h.path.clone()).collect()
    }

    pub fn register_media(&mut self, path: &str, kind: MediaKind) -> Result<MediaHandle, SessionError> {
        if path.is_empty() {
            return Err(SessionError::EmptyPath);
        }
        if self.media_by_path(path).is_some() {
            return Err(SessionError::DuplicatePath(path.to_string()));
        }
        let id = MediaId(format!("m{}", self.media_order.len() + 1));
        let handle = MediaHandle {
            id: id.clone(),
            kind,
            path: path.to_string(),
            display_name: display_name_for(path),
        };
        self.insert_handle(handle.clone());
        Ok(handle)
    }

    /// Re-insert a handle recovered from a persisted record, keeping its id.
    pub fn restore_media(&mut self, handle: MediaHandle) -> Result<(), SessionError> {
        if handle.path.is_empty() {
            return Err(SessionError::EmptyPath);
        }
        if self.media_by_path(&handle.path).is_some() {
            return Err(SessionError::DuplicatePath(handle.path));
        }
        self.insert_handle(handle);
        Ok(())
    }

    fn insert_handle(&mut self, handle: MediaHandle) {
        self.media_order.push(handle.id.clone());
        self.media.insert(handle.id.clone(), handle);
    }

    /// Append a message, stamping it with the next logical timestamp.
    /// Returns the stored message.
    pub fn append_message(&mut self, mut message: Message) -> Result<&Message, SessionError> {
        message.check()?;
        if let Some(missing) = message.media.iter().find(|id| !self.media.contains_key(id)) {
            return Err(SessionError::DanglingMedia(missing.clone()));
        }
        self.clock += 1;
        message.timestamp = self.clock;
        self.messages.push(message);
        Ok(self.messages.last().expect("just pushed"))
    }

    /// Append a message that already carries a timestamp (replay path).
    pub fn restore_message(&mut self, message: Message) -> Result<(), SessionError> {
        message.check()?;
        if let Some(missing) = message.media.iter().find(|id| !self.media.contains_key(id)) {
            return Err(SessionError::DanglingMedia(missing.clone()));
        }
        if message.timestamp <= self.clock {
            return Err(SessionError::InvalidMessage(format!(
                "timestamp {} is not after {}",
                message.timestamp, self.clock
            )));
        }
        self.clock = message.timestamp;
        self.messages.push(message);
        Ok(())
    }

    pub fn visible_transcript(&self) -> Vec<&Message> {
        visible_transcript(self)
    }

    /// Path of the media most recently attached to or mentioned in the dialogue.
    pub fn latest_media_path(&self) -> Option<&str> {
        for message in self.messages.iter().rev() {
            if let Some(id) = message.media.last() {
                if let Some(h) = self.media.get(id) {
                    return Some(&h.path);
                }
            }
            let mut best: Option<(usize, &str)> = None;
            for h in self.media.values() {
                if let Some(pos) = message.text.rfind(h.path.as_str()) {
                    if best.is_none_or(|(p, _)| pos > p) {
                        best = Some((pos, &h.path));
                    }
                }
            }
            if let Some((_, path)) = best {
                return Some(path);
            }
        }
        self.media_order.last().and_then(|id| self.media.get(id)).map(|h| h.path.as_str())
    }
}

/// The user-visible subsequence of the dialogue, in original order.
pub fn visible_transcript(session: &SessionState) -> Vec<&Message> {
    session
        .messages
        .iter()
        .filter(|m| m.role.is_user_visible())
        .collect()
}

fn display_name_for(path: &str) -> String {
    let trimmed = path.trim_end_matches('/');
    let name = trimmed.rsplit(['/', '\\']).next().unwrap_or(trimmed);
    if name.is_empty() {
        path.to_string()
    } else {
        name.to_string()
    }
}
