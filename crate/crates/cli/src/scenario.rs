//! Scenario files for the batch runner.
//!
//! ```text
//! scenario  := { line }
//! line      := blank | "#" text | directive
//! directive := "upload" PATH
//!            | "say" TEXT
//!            | "expect_contains" TEXT
//!            | "expect_trace_kinds" KIND { "," KIND }
//!            | "expect_experts" NAME { "," NAME }
//! ```
//!
//! `upload` stages a file for the next `say`. Expectations apply to the
//! most recent turn; each `expect_experts` line checks the next expert
//! batch of that turn, in order.

use mmreact_core::orchestrate::TraceKind;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("scenario line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    Upload(String),
    Say(String),
    ExpectContains(String),
    ExpectTraceKinds(Vec<TraceKind>),
    ExpectExperts(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub line: usize,
    pub directive: Directive,
}

fn parse_kind(s: &str) -> Option<TraceKind> {
    [TraceKind::LlmCall, TraceKind::ExpertBatch, TraceKind::FinalResponse, TraceKind::Recovery]
        .into_iter()
        .find(|k| k.as_str() == s)
}

fn list(rest: &str) -> Vec<String> {
    rest.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

pub fn parse_scenario(text: &str) -> Result<Vec<Step>, ScenarioError> {
    let mut steps = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (word, rest) = trimmed.split_once(char::is_whitespace).unwrap_or((trimmed, ""));
        let rest = rest.trim();
        let err = |message: String| ScenarioError { line, message };
        let directive = match word {
            "upload" if !rest.is_empty() => Directive::Upload(rest.to_string()),
            "upload" => return Err(err("upload needs a path".into())),
            "say" => Directive::Say(rest.to_string()),
            "expect_contains" if !rest.is_empty() => Directive::ExpectContains(rest.to_string()),
            "expect_contains" => return Err(err("expect_contains needs text".into())),
            "expect_trace_kinds" => {
                let kinds = list(rest)
                    .iter()
                    .map(|k| parse_kind(k).ok_or_else(|| err(format!("unknown trace kind {k:?}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                if kinds.is_empty() {
                    return Err(err("expect_trace_kinds needs at least one kind".into()));
                }
                Directive::ExpectTraceKinds(kinds)
            }
            "expect_experts" => {
                let names = list(rest);
                if names.is_empty() {
                    return Err(err("expect_experts needs at least one name".into()));
                }
                Directive::ExpectExperts(names)
            }
            other => return Err(err(format!("unknown directive {other:?}"))),
        };
        steps.push(Step { line, directive });
    }
    Ok(steps)
}
