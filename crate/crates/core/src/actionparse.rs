//! Parsing model output into either a final answer or expert requests.
//!
//! A response requests experts by emitting the watchword (default
//! `"Assistant,"`) at the start of a line or right after a sentence end.
//! Each such occurrence opens one request that runs to the end of the line
//! or to the next occurrence:
//!
//! ```text
//! request := WATCHWORD clause [ "<" path ">" [ query ] ]
//! clause  := free text naming an expert or asking a question
//! ```
//!
//! When no bracketed path is present, a verbatim occurrence of a path the
//! session already knows is accepted instead. Text before the first request
//! is the thought. A response with no anchored watchword is returned
//! unchanged as the final answer.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experts::{ExpertError, ExpertRegistry};

pub const DEFAULT_WATCHWORD: &str = "Assistant,";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("watchword must not be empty")]
    EmptyWatchword,
    #[error("malformed action at offset {offset}: {text:?} does not name an expert")]
    MalformedAction { offset: usize, text: String },
}

/// One expert request as written by the model. `raw_span` holds byte
/// offsets of the request text (watchword included) in the parsed output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub expert_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    pub raw_span: (usize, usize),
}

impl ActionRequest {
    /// Canonical textual form: `{watchword} {expert_name} <{path}> {query}`.
    /// A request without a path renders as `{watchword} {expert_name}` and
    /// only round-trips when it has no query.
    pub fn render(&self, watchword: &str) -> String {
        let mut out = format!("{watchword} {}", self.expert_name);
        if let Some(path) = &self.path {
            out.push_str(&format!(" <{path}>"));
            if let Some(query) = &self.query {
                out.push(' ');
                out.push_str(query);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    FinalResponse(String),
    Actions {
        thought: Option<String>,
        requests: Vec<ActionRequest>,
    },
}

/// A request bound to a registered expert.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedRequest {
    pub expert: String,
    pub path: Option<String>,
    pub query: Option<String>,
    pub request: ActionRequest,
}

fn bracket_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<([^<>\n]+)>").expect("static regex"))
}

fn is_anchored(text: &str, at: usize) -> bool {
    let before = &text[..at];
    let trimmed = before.trim_end_matches([' ', '\t']);
    if trimmed.is_empty() || trimmed.ends_with(['\n', '\r']) {
        return true;
    }
    trimmed.len() < before.len() && trimmed.ends_with(['.', '!', '?', ':'])
}

/// Byte offsets of every anchored watchword occurrence.
pub fn watchword_offsets(text: &str, watchword: &str) -> Vec<usize> {
    if watchword.is_empty() {
        return Vec::new();
    }
    text.match_indices(watchword)
        .map(|(i, _)| i)
        .filter(|&i| is_anchored(text, i))
        .collect()
}

pub fn parse_llm_output(text: &str, watchword: &str) -> Result<Decision, ParseError> {
    parse_llm_output_with_paths(text, watchword, &[])
}

/// Like [`parse_llm_output`], additionally accepting bare (unbracketed)
/// occurrences of `known_paths` as the request's path.
pub fn parse_llm_output_with_paths(
    text: &str,
    watchword: &str,
    known_paths: &[String],
) -> Result<Decision, ParseError> {
    if watchword.is_empty() {
        return Err(ParseError::EmptyWatchword);
    }
    let offsets = watchword_offsets(text, watchword);
    let Some(&first) = offsets.first() else {
        return Ok(Decision::FinalResponse(text.to_string()));
    };

    let mut requests = Vec::with_capacity(offsets.len());
    for (k, &start) in offsets.iter().enumerate() {
        let body_start = start + watchword.len();
        let line_end = text[body_start..].find('\n').map_or(text.len(), |i| body_start + i);
        let end = offsets.get(k + 1).map_or(line_end, |&next| next.min(line_end));
        let region = &text[body_start..end];
        requests.push(parse_request(region, body_start, start, known_paths)?);
    }

    let thought = text[..first].trim();
    Ok(Decision::Actions {
        thought: (!thought.is_empty()).then(|| thought.to_string()),
        requests,
    })
}

fn parse_request(
    region: &str,
    region_offset: usize,
    start: usize,
    known_paths: &[String],
) -> Result<ActionRequest, ParseError> {
    let located = bracket_re()
        .captures(region)
        .map(|c| {
            let whole = c.get(0).expect("group 0");
            (whole.start(), whole.end(), c[1].to_string())
        })
        .or_else(|| find_known_path(region, known_paths).map(|(s, p)| (s, s + p.len(), p.to_string())));

    let (name_part, path, query_part) = match located {
        Some((s, e, path)) => (&region[..s], Some(path), &region[e..]),
        None => (region, None, ""),
    };
    let mut expert_name = name_part.trim().to_string();
    let mut query = clean_query(query_part);
    if expert_name.is_empty() {
        // "Assistant, <a.png> what is this?" puts the question after the path
        if let Some(q) = query.take() {
            expert_name = q;
        }
    }
    if expert_name.is_empty() {
        return Err(ParseError::MalformedAction {
            offset: start,
            text: region.trim().to_string(),
        });
    }
    let span_end = region_offset + region.trim_end().len();
    Ok(ActionRequest {
        expert_name,
        path,
        query,
        raw_span: (start, span_end),
    })
}

fn clean_query(s: &str) -> Option<String> {
    let q = s.trim();
    if q.is_empty() || q.chars().all(|c| c.is_ascii_punctuation()) {
        None
    } else {
        Some(q.to_string())
    }
}

/// Earliest verbatim occurrence of a known path; the longest path wins ties.
fn find_known_path<'a>(region: &str, known_paths: &'a [String]) -> Option<(usize, &'a str)> {
    known_paths
        .iter()
        .filter(|p| !p.is_empty())
        .filter_map(|p| region.find(p.as_str()).map(|i| (i, p.as_str())))
        .min_by(|a, b| a.0.cmp(&b.0).then(b.1.len().cmp(&a.1.len())))
}

/// Paths mentioned in `text`: bracketed tokens and verbatim known paths,
/// ordered by first appearance, without duplicates.
pub fn extract_paths(text: &str, known_paths: &[String]) -> Vec<String> {
    let mut found: Vec<(usize, String)> = bracket_re()
        .captures_iter(text)
        .map(|c| {
            let g = c.get(1).expect("group 1");
            (g.start(), g.as_str().to_string())
        })
        .collect();
    for path in known_paths.iter().filter(|p| !p.is_empty()) {
        found.extend(text.match_indices(path.as_str()).map(|(i, p)| (i, p.to_string())));
    }
    found.sort_by_key(|(i, _)| *i);
    let mut out: Vec<String> = Vec::new();
    for (_, path) in found {
        if !out.contains(&path) {
            out.push(path);
        }
    }
    out
}

fn normalize_name(s: &str) -> String {
    s.trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .to_lowercase()
}

/// True when `phrase` occurs in `haystack` delimited by non-alphanumerics.
fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    haystack.match_indices(phrase).any(|(i, m)| {
        let before_ok = haystack[..i].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[i + m.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        before_ok && after_ok
    })
}

/// Bind a request to an expert. Exact name matches win, then a leading
/// word equal to an expert name, then trigger phrases in registration order.
pub fn resolve_expert(request: &ActionRequest, registry: &ExpertRegistry) -> Result<ResolvedRequest, ExpertError> {
    if registry.is_empty() {
        return Err(ExpertError::EmptyRegistry);
    }
    let bound = |expert: &str, query: Option<String>| ResolvedRequest {
        expert: expert.to_string(),
        path: request.path.clone(),
        query,
        request: request.clone(),
    };

    let name = normalize_name(&request.expert_name);
    let underscored = name.split_whitespace().collect::<Vec<_>>().join("_").replace('-', "_");
    for candidate in [&name, &underscored] {
        if let Some(d) = registry.get(candidate) {
            return Ok(bound(&d.name, request.query.clone()));
        }
    }

    let clause = request.expert_name.trim();
    if let Some((head, rest)) = clause.split_once(char::is_whitespace) {
        if let Some(d) = registry.get(&normalize_name(head)) {
            let rest = rest.trim();
            let query = match (&request.query, rest.is_empty()) {
                (Some(q), true) => Some(q.clone()),
                (Some(q), false) => Some(format!("{rest} {q}")),
                (None, true) => None,
                (None, false) => Some(rest.to_string()),
            };
            return Ok(bound(&d.name, query));
        }
    }

    let lowered = clause.to_lowercase();
    for d in registry.descriptors() {
        if d.trigger_phrases.iter().any(|p| contains_phrase(&lowered, p)) {
            let query = request.query.clone().or_else(|| Some(clause.to_string()));
            return Ok(bound(&d.name, query));
        }
    }
    Err(ExpertError::UnknownExpert(request.expert_name.clone()))
}
