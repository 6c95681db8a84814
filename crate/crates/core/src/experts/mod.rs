//! Expert registry and the plug-in executor contract.
//!
//! An expert is a descriptor (what the language model is told about it) plus
//! an executor (what actually runs). New experts only need to implement
//! [`ExpertExecutor`] and return one of the [`RawExpertOutput`] kinds; the
//! serializer turns that into observation text, so nothing else changes.

mod builtin;
pub mod math;
mod output;
mod remote;
mod search;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actionparse::ResolvedRequest;
use crate::session::MediaKind;

pub use builtin::{
    builtin_descriptor, builtin_descriptors, fixture_key, BuiltinOptions, EditingExpert, FixtureExpert,
    MathExpert, RemoteEndpoint, BUILTIN_NAMES,
};
pub use output::{Detection, FrameCaption, LineItem, OutputKind, RawExpertOutput, ReceiptFields, Tag};
pub use remote::{RemoteExpert, RemoteExpertRequest};
pub use search::{normalize_query, SearchCorpus, SearchExpert, NO_RESULTS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExpertError {
    #[error("expert {expert} failed: {message}")]
    Failure { expert: String, message: String },
    #[error("expert {0} needs a media path but none was given")]
    MissingPath(String),
    #[error("no expert matches {0:?}")]
    UnknownExpert(String),
    #[error("an expert named {0} is already registered")]
    DuplicateName(String),
    #[error("invalid descriptor for {name}: {reason}")]
    InvalidDescriptor { name: String, reason: String },
    #[error("the expert registry is empty")]
    EmptyRegistry,
}

impl ExpertError {
    pub fn failure(expert: impl Into<String>, message: impl fmt::Display) -> Self {
        ExpertError::Failure {
            expert: expert.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpec {
    ImagePath,
    VideoPath,
    Text,
    PathPlusText,
}

impl InputSpec {
    pub fn requires_path(self) -> bool {
        !matches!(self, InputSpec::Text)
    }

    pub fn describe(self) -> &'static str {
        match self {
            InputSpec::ImagePath => "an image file path in angle brackets",
            InputSpec::VideoPath => "a video file path in angle brackets",
            InputSpec::Text => "plain text after the expert name",
            InputSpec::PathPlusText => "a file path in angle brackets followed by a text instruction",
        }
    }
}

/// One in-context example: what a user might say, and the action line the
/// model should emit in response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertExample {
    pub user: String,
    pub action: String,
}

impl ExpertExample {
    pub fn new(user: impl Into<String>, action: impl Into<String>) -> Self {
        Self {
            user: user.into(),
            action: action.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertDescriptor {
    pub name: String,
    pub capability: String,
    pub input_spec: InputSpec,
    pub output_kind: OutputKind,
    #[serde(default)]
    pub trigger_phrases: Vec<String>,
    #[serde(default)]
    pub examples: Vec<ExpertExample>,
}

impl ExpertDescriptor {
    pub fn validate(&self) -> Result<(), ExpertError> {
        let invalid = |reason: &str| ExpertError::InvalidDescriptor {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.name.trim().is_empty() || self.name.chars().any(char::is_whitespace) {
            return Err(invalid("name must be non-empty and contain no whitespace"));
        }
        if self.name.contains(['<', '>']) {
            return Err(invalid("name must not contain angle brackets"));
        }
        if self.capability.trim().is_empty() {
            return Err(invalid("capability must not be empty"));
        }
        for phrase in &self.trigger_phrases {
            if phrase.trim().is_empty() {
                return Err(invalid("trigger phrases must not be empty"));
            }
            if *phrase != phrase.to_lowercase() {
                return Err(invalid("trigger phrases must be lowercase"));
            }
        }
        Ok(())
    }
}

/// A media file produced by an expert (e.g. an edited image) that the
/// session should register so later requests can refer to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducedMedia {
    pub path: String,
    pub kind: MediaKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertOutput {
    pub raw: RawExpertOutput,
    pub produced_media: Vec<ProducedMedia>,
}

impl From<RawExpertOutput> for ExpertOutput {
    fn from(raw: RawExpertOutput) -> Self {
        Self {
            raw,
            produced_media: Vec::new(),
        }
    }
}

/// Arguments handed to an executor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpertCall<'a> {
    pub expert: &'a str,
    pub path: Option<&'a str>,
    pub query: Option<&'a str>,
}

/// The plug-in contract. Executors are shared across sessions, so they must
/// tolerate concurrent calls.
pub trait ExpertExecutor: Send + Sync {
    fn execute(&self, call: &ExpertCall<'_>) -> Result<ExpertOutput, ExpertError>;
}

impl<F> ExpertExecutor for F
where
    F: Fn(&ExpertCall<'_>) -> Result<ExpertOutput, ExpertError> + Send + Sync,
{
    fn execute(&self, call: &ExpertCall<'_>) -> Result<ExpertOutput, ExpertError> {
        self(call)
    }
}

struct Entry {
    descriptor: ExpertDescriptor,
    executor: Arc<dyn ExpertExecutor>,
}

/// Ordered set of experts; iteration follows registration order.
#[derive(Default)]
pub struct ExpertRegistry {
    entries: Vec<Entry>,
    by_name: HashMap<String, usize>,
}

impl fmt::Debug for ExpertRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.iter().map(|e| &e.descriptor.name)).finish()
    }
}

impl ExpertRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        descriptor: ExpertDescriptor,
        executor: Arc<dyn ExpertExecutor>,
    ) -> Result<(), ExpertError> {
        descriptor.validate()?;
        let key = descriptor.name.to_lowercase();
        if self.by_name.contains_key(&key) {
            return Err(ExpertError::DuplicateName(descriptor.name));
        }
        self.by_name.insert(key, self.entries.len());
        self.entries.push(Entry { descriptor, executor });
        Ok(())
    }

    /// Builder-style [`register`](Self::register).
    pub fn with(mut self, descriptor: ExpertDescriptor, executor: Arc<dyn ExpertExecutor>) -> Result<Self, ExpertError> {
        self.register(descriptor, executor)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Case-insensitive lookup by name.
    pub fn get(&self, name: &str) -> Option<&ExpertDescriptor> {
        self.by_name
            .get(&name.to_lowercase())
            .map(|&i| &self.entries[i].descriptor)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ExpertDescriptor> {
        self.entries.iter().map(|e| &e.descriptor)
    }

    pub fn names(&self) -> Vec<&str> {
        self.descriptors().map(|d| d.name.as_str()).collect()
    }

    /// Run a resolved request. The path must already be filled in (sticky
    /// path resolution happens in the orchestrator) when the expert needs one.
    pub fn execute(&self, resolved: &ResolvedRequest) -> Result<ExpertOutput, ExpertError> {
        let &index = self
            .by_name
            .get(&resolved.expert.to_lowercase())
            .ok_or_else(|| ExpertError::UnknownExpert(resolved.expert.clone()))?;
        let entry = &self.entries[index];
        if entry.descriptor.input_spec.requires_path() && resolved.path.is_none() {
            return Err(ExpertError::MissingPath(entry.descriptor.name.clone()));
        }
        let call = ExpertCall {
            expert: &entry.descriptor.name,
            path: resolved.path.as_deref(),
            query: resolved.query.as_deref(),
        };
        let output = entry.executor.execute(&call)?;
        output
            .raw
            .validate()
            .map_err(|e| ExpertError::failure(&entry.descriptor.name, e))?;
        Ok(output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actionparse::ActionRequest;

    fn descriptor(name: &str) -> ExpertDescriptor {
        ExpertDescriptor {
            name: name.into(),
            capability: "does a thing".into(),
            input_spec: InputSpec::ImagePath,
            output_kind: OutputKind::PlainText,
            trigger_phrases: vec![],
            examples: vec![],
        }
    }

    fn echo() -> Arc<dyn ExpertExecutor> {
        Arc::new(|call: &ExpertCall<'_>| {
            Ok(RawExpertOutput::PlainText(format!("{} on {:?}", call.expert, call.path)).into())
        })
    }

    fn resolved(expert: &str, path: Option<&str>) -> ResolvedRequest {
        ResolvedRequest {
            expert: expert.into(),
            path: path.map(String::from),
            query: None,
            request: ActionRequest {
                expert_name: expert.into(),
                path: path.map(String::from),
                query: None,
                raw_span: (0, 0),
            },
        }
    }

    #[test]
    fn register_and_lookup() {
        let mut reg = ExpertRegistry::new();
        reg.register(descriptor("captioning"), echo()).unwrap();
        assert_eq!(reg.len(), 1);
        assert_eq!(reg.get("Captioning"), Some(&descriptor("captioning")));
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut reg = ExpertRegistry::new();
        reg.register(descriptor("ocr"), echo()).unwrap();
        let err = reg.register(descriptor("OCR"), echo()).unwrap_err();
        assert_eq!(err, ExpertError::DuplicateName("OCR".into()));
        assert_eq!(reg.len(), 1);
    }

    #[test]
    fn uppercase_trigger_rejected() {
        let mut d = descriptor("x");
        d.trigger_phrases = vec!["Objects".into()];
        assert!(matches!(d.validate(), Err(ExpertError::InvalidDescriptor { .. })));
    }

    #[test]
    fn registration_order_is_iteration_order() {
        let mut reg = ExpertRegistry::new();
        for n in ["c", "a", "b"] {
            reg.register(descriptor(n), echo()).unwrap();
        }
        assert_eq!(reg.names(), vec!["c", "a", "b"]);
    }

    #[test]
    fn missing_path_is_reported() {
        let mut reg = ExpertRegistry::new();
        reg.register(descriptor("detection"), echo()).unwrap();
        let err = reg.execute(&resolved("detection", None)).unwrap_err();
        assert_eq!(err, ExpertError::MissingPath("detection".into()));
        assert!(reg.execute(&resolved("detection", Some("a.png"))).is_ok());
    }

    #[test]
    fn invalid_output_becomes_failure() {
        let mut reg = ExpertRegistry::new();
        let bad: Arc<dyn ExpertExecutor> = Arc::new(|_: &ExpertCall<'_>| {
            Ok(RawExpertOutput::Detections(vec![Detection::new("x", 5, 5, 1, 1)]).into())
        });
        reg.register(descriptor("detection"), bad).unwrap();
        assert!(matches!(
            reg.execute(&resolved("detection", Some("a.png"))),
            Err(ExpertError::Failure { .. })
        ));
    }
}
