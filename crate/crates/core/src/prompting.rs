//! Building the model input: the instruction prefix describing every
//! expert, the rendered dialogue, and eviction to stay inside the context
//! budget.

use std::collections::HashSet;

use thiserror::Error;

use crate::actionparse::DEFAULT_WATCHWORD;
use crate::experts::{ExpertDescriptor, ExpertRegistry, OutputKind};
use crate::llm::{LlmInput, SegmentRole};
use crate::session::{Message, Role, SessionConfig, SessionState};

pub const DEFAULT_PREFIX_TEMPLATE: &str = include_str!("../templates/prefix.txt");
pub const DEFAULT_EXAMPLE_DIALOGUES: &str = include_str!("../templates/examples.txt");
pub const DEFAULT_EXAMPLES_PER_EXPERT: usize = 2;
/// Separator line between dialogues in an examples file.
pub const DIALOGUE_SEPARATOR: &str = "---";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("cannot build a prompt prefix from an empty expert registry")]
    EmptyRegistry,
    #[error("prompt needs at least {needed} tokens but only {available} are available")]
    BudgetImpossible { needed: usize, available: usize },
    #[error("invalid token budget: {0}")]
    InvalidBudget(String),
}

/// Rough token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenBudget {
    pub limit: usize,
    pub reserved_for_completion: usize,
}

impl TokenBudget {
    pub fn new(limit: usize, reserved_for_completion: usize) -> Result<Self, PromptError> {
        if limit == 0 || reserved_for_completion == 0 || reserved_for_completion >= limit {
            return Err(PromptError::InvalidBudget(format!(
                "need 0 < reserved ({reserved_for_completion}) < limit ({limit})"
            )));
        }
        Ok(Self {
            limit,
            reserved_for_completion,
        })
    }

    pub fn from_config(config: &SessionConfig) -> Result<Self, PromptError> {
        Self::new(config.token_budget as usize, config.reserved_for_completion as usize)
    }

    /// Tokens the rendered input may occupy.
    pub fn available(&self) -> usize {
        self.limit - self.reserved_for_completion
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixOptions {
    /// Template with `{expert_blocks}`, `{examples}` and `{watchword}` placeholders.
    pub template: String,
    pub watchword: String,
    pub examples_per_expert: usize,
    pub example_dialogues: Vec<String>,
}

impl Default for PrefixOptions {
    fn default() -> Self {
        Self {
            template: DEFAULT_PREFIX_TEMPLATE.to_string(),
            watchword: DEFAULT_WATCHWORD.to_string(),
            examples_per_expert: DEFAULT_EXAMPLES_PER_EXPERT,
            example_dialogues: split_dialogues(DEFAULT_EXAMPLE_DIALOGUES),
        }
    }
}

/// Split an examples file on `---` lines.
pub fn split_dialogues(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim() == DIALOGUE_SEPARATOR {
            out.push(current.join("\n"));
            current.clear();
        } else {
            current.push(line);
        }
    }
    out.push(current.join("\n"));
    out.into_iter()
        .map(|d| d.trim().to_string())
        .filter(|d| !d.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertBlock {
    pub name: String,
    /// Full block text, examples included.
    pub text: String,
    pub examples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPrefix {
    pub system_instructions: String,
    pub expert_blocks: Vec<ExpertBlock>,
    pub example_dialogues: Vec<String>,
    pub watchword: String,
}

impl PromptPrefix {
    /// The prefix text sent as the system segment.
    pub fn render(&self) -> String {
        let blocks = self
            .expert_blocks
            .iter()
            .map(|b| b.text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n");
        let examples = self
            .example_dialogues
            .iter()
            .map(|d| fill_template(d, &[("watchword", &self.watchword)]))
            .collect::<Vec<_>>()
            .join("\n\n");
        fill_template(
            &self.system_instructions,
            &[
                ("expert_blocks", &blocks),
                ("examples", &examples),
                ("watchword", &self.watchword),
            ],
        )
        .trim_end()
        .to_string()
    }
}

/// Single-pass `{name}` substitution; unknown placeholders are left as is
/// and substituted values are never rescanned.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let key = &after[..close];
            values
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| (v, close))
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn describe_output(kind: OutputKind) -> &'static str {
    match kind {
        OutputKind::PlainText => "plain text",
        OutputKind::Tags => "comma-separated tags, most confident first",
        OutputKind::Detections => "one <label, x1, y1, x2, y2> box per line, in pixels",
        OutputKind::OcrLines => "the recognized text, one line per text line",
        OutputKind::ReceiptFields => "merchant, date, total and line items as key: value lines",
        OutputKind::KeyValues => "key: value lines",
        OutputKind::FrameCaptions => "one \"at <seconds>s: <caption>\" line per sampled frame",
    }
}

fn render_block(descriptor: &ExpertDescriptor, options: &PrefixOptions) -> ExpertBlock {
    let examples: Vec<String> = descriptor
        .examples
        .iter()
        .take(options.examples_per_expert)
        .map(|ex| {
            let action = match ex.action.strip_prefix(DEFAULT_WATCHWORD) {
                Some(rest) => format!("{}{rest}", options.watchword),
                None => ex.action.clone(),
            };
            format!("  User: {}\n  You: {action}", ex.user)
        })
        .collect();
    let mut text = format!(
        "Expert: {}\nCapability: {}\nInput: {}\nOutput: {}",
        descriptor.name,
        descriptor.capability,
        descriptor.input_spec.describe(),
        describe_output(descriptor.output_kind),
    );
    if !examples.is_empty() {
        text.push_str("\nExamples:\n");
        text.push_str(&examples.join("\n"));
    }
    ExpertBlock {
        name: descriptor.name.clone(),
        text,
        examples,
    }
}

/// One block per registered expert, in registration order.
pub fn build_prefix(registry: &ExpertRegistry, options: &PrefixOptions) -> Result<PromptPrefix, PromptError> {
    if registry.is_empty() {
        return Err(PromptError::EmptyRegistry);
    }
    Ok(PromptPrefix {
        system_instructions: options.template.clone(),
        expert_blocks: registry.descriptors().map(|d| render_block(d, options)).collect(),
        example_dialogues: options.example_dialogues.clone(),
        watchword: options.watchword.clone(),
    })
}

/// The segment a message contributes to the model input.
pub fn message_segment(session: &SessionState, message: &Message) -> (SegmentRole, String) {
    let role = match message.role {
        Role::User | Role::Observation => SegmentRole::User,
        Role::AssistantFinal | Role::Thought | Role::ActionRequest => SegmentRole::Assistant,
        Role::System => SegmentRole::System,
    };
    let text = if message.role == Role::User && !message.media.is_empty() {
        let mut lines: Vec<String> = message
            .media
            .iter()
            .filter_map(|id| session.media(id))
            .map(|h| format!("<{}>", h.path))
            .collect();
        if !message.text.is_empty() {
            lines.push(message.text.clone());
        }
        lines.join("\n")
    } else {
        message.text.clone()
    };
    (role, text)
}

/// Indices of messages to keep so that prefix plus kept messages fit in
/// `available` tokens.
///
/// Eviction order: internal messages of earlier turns (oldest first), then
/// whole earlier turns (oldest first; a user message whose media is referenced
/// later stays), then internal messages of the current turn. The latest user
/// message is never evicted.
pub fn plan_eviction(
    session: &SessionState,
    prefix_tokens: usize,
    available: usize,
) -> Result<Vec<usize>, PromptError> {
    let messages = session.messages();
    let costs: Vec<usize> = messages
        .iter()
        .map(|m| estimate_tokens(&message_segment(session, m).1))
        .collect();
    let mut total: usize = prefix_tokens + costs.iter().sum::<usize>();
    let mut kept = vec![true; messages.len()];

    if total > available {
        let protected = protected_messages(session);
        for group in eviction_order(messages, &protected) {
            if total <= available {
                break;
            }
            for i in group {
                kept[i] = false;
                total -= costs[i];
            }
        }
    }
    if total > available {
        return Err(PromptError::BudgetImpossible {
            needed: total,
            available,
        });
    }
    Ok((0..messages.len()).filter(|&i| kept[i]).collect())
}

/// Groups of message indices in the order they are evicted.
fn eviction_order(messages: &[Message], protected: &HashSet<usize>) -> Vec<Vec<usize>> {
    let turn_start = messages.iter().rposition(|m| m.role == Role::User).unwrap_or(messages.len());
    let mut order: Vec<Vec<usize>> = (0..turn_start)
        .filter(|&i| messages[i].role.is_internal())
        .map(|i| vec![i])
        .collect();

    let mut unit: Vec<usize> = Vec::new();
    for (i, m) in messages[..turn_start].iter().enumerate() {
        if m.role == Role::User && !unit.is_empty() {
            order.push(std::mem::take(&mut unit));
        }
        if !m.role.is_internal() && !protected.contains(&i) {
            unit.push(i);
        }
    }
    if !unit.is_empty() {
        order.push(unit);
    }

    order.extend(
        (turn_start..messages.len())
            .filter(|&i| messages[i].role.is_internal())
            .map(|i| vec![i]),
    );
    order
}

/// The latest user message, and user messages carrying media that a later
/// message refers to by id or by path.
fn protected_messages(session: &SessionState) -> HashSet<usize> {
    let messages = session.messages();
    let mut protected = HashSet::new();
    if let Some(last_user) = messages.iter().rposition(|m| m.role == Role::User) {
        protected.insert(last_user);
    }
    for (i, m) in messages.iter().enumerate() {
        if m.role != Role::User || m.media.is_empty() {
            continue;
        }
        let paths: Vec<&str> = m
            .media
            .iter()
            .filter_map(|id| session.media(id))
            .map(|h| h.path.as_str())
            .collect();
        let referenced = messages[i + 1..]
            .iter()
            .any(|later| later.media.iter().any(|id| m.media.contains(id)) || paths.iter().any(|p| later.text.contains(p)));
        if referenced {
            protected.insert(i);
        }
    }
    protected
}

/// Prefix followed by the session's messages, evicting as needed to fit the budget.
pub fn render_dialogue(
    session: &SessionState,
    prefix: &PromptPrefix,
    budget: &TokenBudget,
) -> Result<LlmInput, PromptError> {
    let prefix_text = prefix.render();
    let kept = plan_eviction(session, estimate_tokens(&prefix_text), budget.available())?;
    let mut input = LlmInput::new(prefix_text);
    for i in kept {
        let (role, text) = message_segment(session, &session.messages()[i]);
        input.push(role, text);
    }
    Ok(input)
}

/// Token estimate of a whole model input, summed per segment.
pub fn input_tokens(input: &LlmInput) -> usize {
    input.segments().iter().map(|s| estimate_tokens(&s.text)).sum()
}
