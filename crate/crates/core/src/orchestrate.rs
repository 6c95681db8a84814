//! The reasoning loop: call the model, run the experts it asks for, feed
//! the observations back, and stop at a final answer or at the step limit.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::actionparse::{parse_llm_output_with_paths, resolve_expert, ActionRequest, Decision, ParseError};
use crate::experts::{ExpertError, ExpertRegistry};
use crate::llm::{LlmBackend, LlmError};
use crate::prompting::{build_prefix, input_tokens, render_dialogue, PrefixOptions, PromptError, PromptPrefix, TokenBudget};
use crate::serialize::{observation_header, standardize, DEFAULT_TAG_THRESHOLD};
use crate::session::{MediaKind, Message, Role, SessionError, SessionState};

/// Shown instead of an empty model answer so the transcript never holds an
/// empty message.
pub const EMPTY_FINAL_TEXT: &str = "I have nothing to add.";

#[derive(Debug, Error)]
pub enum TurnError {
    #[error("language model failed: {0}")]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchEntry {
    /// Resolved expert name, or the name as written when resolution failed.
    pub expert: String,
    /// The request in canonical form.
    pub request: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    pub ok: bool,
    pub observation: String,
    pub observation_digest: String,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceDetail {
    LlmCall {
        input_digest: String,
        input_tokens: usize,
        output_digest: String,
        output: String,
    },
    ExpertBatch {
        entries: Vec<BatchEntry>,
    },
    FinalResponse {
        text: String,
        forced: bool,
    },
    Recovery {
        reason: String,
        observation: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    LlmCall,
    ExpertBatch,
    FinalResponse,
    Recovery,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::LlmCall => "llm_call",
            TraceKind::ExpertBatch => "expert_batch",
            TraceKind::FinalResponse => "final_response",
            TraceKind::Recovery => "recovery",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: u32,
    #[serde(flatten)]
    pub detail: TraceDetail,
}

impl TraceEvent {
    pub fn kind(&self) -> TraceKind {
        match self.detail {
            TraceDetail::LlmCall { .. } => TraceKind::LlmCall,
            TraceDetail::ExpertBatch { .. } => TraceKind::ExpertBatch,
            TraceDetail::FinalResponse { .. } => TraceKind::FinalResponse,
            TraceDetail::Recovery { .. } => TraceKind::Recovery,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnResult {
    pub final_text: String,
    pub trace: Vec<TraceEvent>,
    /// Number of model calls made.
    pub steps_used: u32,
}

impl TurnResult {
    pub fn kinds(&self) -> Vec<TraceKind> {
        self.trace.iter().map(TraceEvent::kind).collect()
    }
}

/// One JSON record per line.
pub fn export_trace(trace: &[TraceEvent]) -> String {
    trace
        .iter()
        .map(|e| serde_json::to_string(e).expect("trace events serialize") + "\n")
        .collect()
}

pub fn import_trace(text: &str) -> Result<Vec<TraceEvent>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

pub fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Whether expert durations are measured or reported as zero. Zero keeps
/// traces byte-identical across runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Timing {
    #[default]
    Measured,
    Zero,
}

/// What gets appended to the session for one executed request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchItem {
    pub request: ActionRequest,
    pub entry: BatchEntry,
}

/// Shared, immutable turn dependencies. Cheap to clone.
#[derive(Clone)]
pub struct Engine {
    registry: Arc<ExpertRegistry>,
    backend: Arc<dyn LlmBackend>,
    prefix: PromptPrefix,
    pub tag_threshold: f64,
    pub timing: Timing,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("registry", &self.registry)
            .field("watchword", &self.prefix.watchword)
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(
        registry: Arc<ExpertRegistry>,
        backend: Arc<dyn LlmBackend>,
        options: &PrefixOptions,
    ) -> Result<Self, PromptError> {
        let prefix = build_prefix(&registry, options)?;
        Ok(Self {
            registry,
            backend,
            prefix,
            tag_threshold: DEFAULT_TAG_THRESHOLD,
            timing: Timing::Measured,
        })
    }

    pub fn registry(&self) -> &ExpertRegistry {
        &self.registry
    }

    pub fn prefix(&self) -> &PromptPrefix {
        &self.prefix
    }

    pub fn watchword(&self) -> &str {
        &self.prefix.watchword
    }

    /// Run one user turn. On error the session is restored to its state
    /// before the call.
    pub fn run_turn(
        &self,
        session: &mut SessionState,
        user_text: &str,
        media: &[(String, MediaKind)],
        sink: &mut dyn FnMut(&TraceEvent),
    ) -> Result<TurnResult, TurnError> {
        let snapshot = session.clone();
        let result = self.run_turn_inner(session, user_text, media, sink);
        if result.is_err() {
            *session = snapshot;
        }
        result
    }

    fn run_turn_inner(
        &self,
        session: &mut SessionState,
        user_text: &str,
        media: &[(String, MediaKind)],
        sink: &mut dyn FnMut(&TraceEvent),
    ) -> Result<TurnResult, TurnError> {
        let budget = TokenBudget::from_config(&session.config)?;
        let max_steps = session.config.max_steps.max(1);

        let mut ids = Vec::with_capacity(media.len());
        for (path, kind) in media {
            let id = match session.media_by_path(path) {
                Some(h) => h.id.clone(),
                None => session.register_media(path, *kind)?.id,
            };
            ids.push(id);
        }
        session.append_message(Message::user(user_text, ids))?;
        session.turn_counter += 1;

        let mut trace: Vec<TraceEvent> = Vec::new();
        let mut emit = |trace: &mut Vec<TraceEvent>, detail: TraceDetail| {
            let event = TraceEvent {
                step: trace.len() as u32 + 1,
                detail,
            };
            sink(&event);
            trace.push(event);
        };
        let mut gathered: Vec<String> = Vec::new();
        let mut llm_calls = 0u32;

        loop {
            let input = render_dialogue(session, &self.prefix, &budget)?;
            let output = self.backend.complete(&input)?;
            llm_calls += 1;
            emit(
                &mut trace,
                TraceDetail::LlmCall {
                    input_digest: digest(&input.to_text()),
                    input_tokens: input_tokens(&input),
                    output_digest: digest(&output),
                    output: output.clone(),
                },
            );
            let step = trace.len() as u32;

            let decision = parse_llm_output_with_paths(&output, self.watchword(), &session.known_paths());
            let (thought, requests) = match decision {
                Ok(Decision::FinalResponse(text)) => {
                    let text = if text.trim().is_empty() {
                        EMPTY_FINAL_TEXT.to_string()
                    } else {
                        text
                    };
                    session.append_message(Message::assistant_final(text.clone()))?;
                    emit(&mut trace, TraceDetail::FinalResponse { text: text.clone(), forced: false });
                    return Ok(TurnResult {
                        final_text: text,
                        trace,
                        steps_used: llm_calls,
                    });
                }
                Ok(Decision::Actions { thought, requests }) => (thought, requests),
                Err(ParseError::EmptyWatchword) => return Err(ParseError::EmptyWatchword.into()),
                Err(err @ ParseError::MalformedAction { .. }) => {
                    if llm_calls >= max_steps {
                        return self.force_final(session, &mut trace, &mut emit, &gathered, llm_calls, max_steps);
                    }
                    let observation = format!(
                        "{}\nYour request could not be carried out: {err}. Start each request with \"{}\" followed by one of: {}.",
                        observation_header("system"),
                        self.watchword(),
                        self.registry.names().join(", ")
                    );
                    session.append_message(Message::internal(Role::ActionRequest, output.trim(), step))?;
                    session.append_message(Message::internal(Role::Observation, observation.clone(), step))?;
                    emit(
                        &mut trace,
                        TraceDetail::Recovery {
                            reason: err.to_string(),
                            observation,
                        },
                    );
                    continue;
                }
            };

            if llm_calls >= max_steps {
                return self.force_final(session, &mut trace, &mut emit, &gathered, llm_calls, max_steps);
            }

            if let Some(thought) = thought.filter(|t| !t.trim().is_empty()) {
                session.append_message(Message::internal(Role::Thought, thought, step))?;
            }
            for request in &requests {
                session.append_message(Message::internal(Role::ActionRequest, request.render(self.watchword()), step))?;
            }
            let items = self.execute_batch(session, &requests);
            let batch_step = step + 1;
            for item in &items {
                session.append_message(Message::internal(Role::Observation, item.entry.observation.clone(), batch_step))?;
                if item.entry.ok {
                    gathered.push(item.entry.observation.clone());
                }
            }
            emit(
                &mut trace,
                TraceDetail::ExpertBatch {
                    entries: items.into_iter().map(|i| i.entry).collect(),
                },
            );
        }
    }

    fn force_final(
        &self,
        session: &mut SessionState,
        trace: &mut Vec<TraceEvent>,
        emit: &mut dyn FnMut(&mut Vec<TraceEvent>, TraceDetail),
        gathered: &[String],
        llm_calls: u32,
        max_steps: u32,
    ) -> Result<TurnResult, TurnError> {
        let text = forced_final_text(max_steps, gathered);
        session.append_message(Message::assistant_final(text.clone()))?;
        emit(trace, TraceDetail::FinalResponse { text: text.clone(), forced: true });
        Ok(TurnResult {
            final_text: text,
            trace: std::mem::take(trace),
            steps_used: llm_calls,
        })
    }

    /// Run requests one after another in the given order. Failures turn
    /// into failure observations in place; produced media is registered with
    /// the session.
    pub fn execute_batch(&self, session: &mut SessionState, requests: &[ActionRequest]) -> Vec<BatchItem> {
        let mut items = Vec::with_capacity(requests.len());
        for request in requests {
            let started = Instant::now();
            let outcome = resolve_expert(request, &self.registry).and_then(|mut resolved| {
                if resolved.path.is_none()
                    && self
                        .registry
                        .get(&resolved.expert)
                        .is_some_and(|d| d.input_spec.requires_path())
                {
                    resolved.path = session.latest_media_path().map(String::from);
                }
                let output = self.registry.execute(&resolved)?;
                Ok((resolved, output))
            });
            let duration_ms = match self.timing {
                Timing::Measured => started.elapsed().as_millis() as u64,
                Timing::Zero => 0,
            };
            let entry = match outcome {
                Ok((resolved, output)) => {
                    for produced in &output.produced_media {
                        if session.media_by_path(&produced.path).is_none() {
                            // a produced path is never empty and never a duplicate here
                            let _ = session.register_media(&produced.path, produced.kind);
                        }
                    }
                    match standardize(&resolved.expert, output.raw, duration_ms, self.tag_threshold) {
                        Ok(obs) => entry_for(request, &resolved.expert, resolved.path, resolved.query, true, obs.text, duration_ms, self.watchword()),
                        Err(e) => {
                            let text = failure_observation(&resolved.expert, &e.to_string());
                            entry_for(request, &resolved.expert, resolved.path, resolved.query, false, text, duration_ms, self.watchword())
                        }
                    }
                }
                Err(err) => {
                    let name = match &err {
                        ExpertError::Failure { expert, .. } => expert.clone(),
                        _ => request.expert_name.clone(),
                    };
                    let text = failure_observation(&name, &self.failure_message(&err));
                    entry_for(request, &name, request.path.clone(), request.query.clone(), false, text, duration_ms, self.watchword())
                }
            };
            items.push(BatchItem {
                request: request.clone(),
                entry,
            });
        }
        items
    }

    fn failure_message(&self, err: &ExpertError) -> String {
        match err {
            ExpertError::UnknownExpert(name) => format!(
                "no expert matches \"{name}\"; available experts are {}",
                self.registry.names().join(", ")
            ),
            ExpertError::Failure { message, .. } => message.clone(),
            other => other.to_string(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn entry_for(
    request: &ActionRequest,
    expert: &str,
    path: Option<String>,
    query: Option<String>,
    ok: bool,
    observation: String,
    duration_ms: u64,
    watchword: &str,
) -> BatchEntry {
    BatchEntry {
        expert: expert.to_string(),
        request: request.render(watchword),
        path,
        query,
        ok,
        observation_digest: digest(&observation),
        observation,
        duration_ms,
    }
}

/// Observation text for a request that could not be served.
pub fn failure_observation(expert: &str, message: &str) -> String {
    format!("{}\nExpert {expert} failed: {message}", observation_header(expert))
}

/// Fixed wording used when the step limit ends a turn.
pub fn forced_final_text(max_steps: u32, gathered: &[String]) -> String {
    let mut text = format!("I reached the limit of {max_steps} reasoning steps before finishing.");
    if gathered.is_empty() {
        text.push_str(" No expert results were gathered.");
    } else {
        text.push_str(" Here is what the experts reported:\n");
        text.push_str(&gathered.join("\n"));
    }
    text
}
