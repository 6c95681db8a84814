//! Core of the multimodal reasoning-and-action engine.
//!
//! A text-only language model sees images and videos only as file paths.
//! When it needs to know what is in one, it writes a request that starts
//! with a watchword; the engine runs the named expert, turns the result into
//! text and hands it back, looping until the model answers the user.

pub mod actionparse;
pub mod config;
pub mod experts;
pub mod llm;
pub mod orchestrate;
pub mod prompting;
pub mod serialize;
pub mod session;

#[cfg(test)]
mod testutil;

pub use actionparse::{parse_llm_output, resolve_expert, ActionRequest, Decision, ParseError, DEFAULT_WATCHWORD};
pub use config::{Config, ConfigError};
pub use experts::{ExpertDescriptor, ExpertError, ExpertExecutor, ExpertRegistry, RawExpertOutput};
pub use llm::{LlmBackend, LlmError, LlmInput, ScriptedBackend};
pub use orchestrate::{export_trace, import_trace, Engine, TraceDetail, TraceEvent, TraceKind, TurnError, TurnResult};
pub use prompting::{build_prefix, estimate_tokens, render_dialogue, PrefixOptions, PromptPrefix, TokenBudget};
pub use serialize::{standardize, Observation};
pub use session::{MediaHandle, MediaId, MediaKind, Message, Role, SessionConfig, SessionError, SessionState};
