//! Rule-driven stand-in for a language model.
//!
//! Script grammar (line oriented; `#` starts a comment line):
//!
//! ```text
//! script  := { blank | comment | rule }
//! rule    := "WHEN" matcher "RESPOND" body
//! matcher := "contains" STRING | "last" "contains" STRING | "call" INTEGER
//! body    := "<<<" text ">>>"
//! STRING  := '"' { char | '\"' | '\\' | '\n' } '"'
//! ```
//!
//! A body may sit on one line (`<<<text>>>`) or span lines, in which case the
//! newline right after `<<<` and the one right before `>>>` are dropped.
//! `contains` looks at the whole dialogue (the system prefix excluded),
//! `last contains` only at the final segment, and `call N` fires on the
//! N-th call (1-based) regardless of input. Rules are tried in file order.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

use super::{LlmBackend, LlmError, LlmInput};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("script line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    Contains(String),
    LastContains(String),
    NthCall(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedRule {
    pub matcher: Matcher,
    pub response: String,
}

impl ScriptedRule {
    fn matches(&self, input: &LlmInput, call: usize) -> bool {
        match &self.matcher {
            Matcher::Contains(needle) => input.dialogue().iter().any(|s| s.text.contains(needle.as_str())),
            Matcher::LastContains(needle) => input
                .dialogue()
                .last()
                .is_some_and(|s| s.text.contains(needle.as_str())),
            Matcher::NthCall(n) => *n == call,
        }
    }
}

#[derive(Debug)]
pub struct ScriptedBackend {
    rules: Vec<ScriptedRule>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptedRule>) -> Self {
        Self {
            rules,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ScriptError> {
        load_script(path).map(Self::new)
    }

    pub fn rules(&self) -> &[ScriptedRule] {
        &self.rules
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, input: &LlmInput) -> Result<String, LlmError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        self.rules
            .iter()
            .find(|r| r.matches(input, call))
            .map(|r| r.response.clone())
            .ok_or(LlmError::NoRuleMatched { call })
    }
}

pub fn load_script(path: &Path) -> Result<Vec<ScriptedRule>, ScriptError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScriptError {
        line: 0,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_script(&text)
}

pub fn parse_script(text: &str) -> Result<Vec<ScriptedRule>, ScriptError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut rules = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line_no = i + 1;
        let line = lines[i].trim_start();
        if line.trim().is_empty() || line.starts_with('#') {
            i += 1;
            continue;
        }
        let err = |message: String| ScriptError { line: line_no, message };
        let rest = line
            .strip_prefix("WHEN ")
            .ok_or_else(|| err(format!("expected `WHEN`, found {:?}", lines[i])))?;
        let (matcher, rest) = parse_matcher(rest.trim_start()).map_err(err)?;
        let rest = rest
            .trim_start()
            .strip_prefix("RESPOND")
            .ok_or_else(|| err("expected `RESPOND` after the matcher".into()))?;
        let rest = rest
            .trim_start()
            .strip_prefix("<<<")
            .ok_or_else(|| err("expected `<<<` to open the response body".into()))?;

        let response;
        if let Some(end) = rest.rfind(">>>") {
            if !rest[end + 3..].trim().is_empty() {
                return Err(err("unexpected text after `>>>`".into()));
            }
            response = rest[..end].to_string();
            i += 1;
        } else {
            let mut body: Vec<&str> = Vec::new();
            let first = rest;
            let mut j = i + 1;
            let closed = loop {
                let Some(l) = lines.get(j) else { break None };
                if let Some(end) = l.rfind(">>>") {
                    if !l[end + 3..].trim().is_empty() {
                        return Err(ScriptError {
                            line: j + 1,
                            message: "unexpected text after `>>>`".into(),
                        });
                    }
                    break Some(&l[..end]);
                }
                body.push(l);
                j += 1;
            };
            let Some(last) = closed else {
                return Err(err("response body is never closed with `>>>`".into()));
            };
            let mut parts: Vec<&str> = Vec::new();
            if !first.is_empty() {
                parts.push(first);
            }
            parts.extend(body);
            if !last.is_empty() {
                parts.push(last);
            }
            response = parts.join("\n");
            i = j + 1;
        }
        rules.push(ScriptedRule { matcher, response });
    }
    Ok(rules)
}

fn parse_matcher(s: &str) -> Result<(Matcher, &str), String> {
    if let Some(rest) = s.strip_prefix("contains") {
        let (needle, rest) = parse_string(rest.trim_start())?;
        Ok((Matcher::Contains(needle), rest))
    } else if let Some(rest) = s.strip_prefix("last") {
        let rest = rest
            .trim_start()
            .strip_prefix("contains")
            .ok_or("expected `contains` after `last`")?;
        let (needle, rest) = parse_string(rest.trim_start())?;
        Ok((Matcher::LastContains(needle), rest))
    } else if let Some(rest) = s.strip_prefix("call") {
        let rest = rest.trim_start();
        let digits = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
        let n: usize = rest[..digits]
            .parse()
            .map_err(|_| "expected a call number after `call`".to_string())?;
        if n == 0 {
            return Err("call numbers start at 1".into());
        }
        Ok((Matcher::NthCall(n), &rest[digits..]))
    } else {
        Err(format!("unknown matcher in {s:?}; expected contains, last contains or call"))
    }
}

fn parse_string(s: &str) -> Result<(String, &str), String> {
    let mut chars = s.char_indices();
    if !matches!(chars.next(), Some((_, '"'))) {
        return Err("expected a double-quoted string".into());
    }
    let mut out = String::new();
    while let Some((i, c)) = chars.next() {
        match c {
            '"' => {
                if out.is_empty() {
                    return Err("match string must not be empty".into());
                }
                return Ok((out, &s[i + 1..]));
            }
            '\\' => match chars.next() {
                Some((_, '"')) => out.push('"'),
                Some((_, '\\')) => out.push('\\'),
                Some((_, 'n')) => out.push('\n'),
                other => return Err(format!("bad escape {:?}", other.map(|(_, c)| c))),
            },
            c => out.push(c),
        }
    }
    Err("unterminated string".into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::SegmentRole;

    fn input(user: &str) -> LlmInput {
        let mut i = LlmInput::new("prefix mentions receipt and objects");
        i.push(SegmentRole::User, user);
        i
    }

    #[test]
    fn three_rules_in_file_order() {
        let rules = parse_script(
            r#"# comment
WHEN contains "receipt" RESPOND <<<Assistant, receipt <r1.png>>>>

WHEN call 2 RESPOND <<<
second
call
>>>
WHEN last contains "say \"hi\"" RESPOND <<<hello>>>
"#,
        )
        .unwrap();
        assert_eq!(rules.len(), 3);
        assert_eq!(rules[0].matcher, Matcher::Contains("receipt".into()));
        assert_eq!(rules[0].response, "Assistant, receipt <r1.png>");
        assert_eq!(rules[1].matcher, Matcher::NthCall(2));
        assert_eq!(rules[1].response, "second\ncall");
        assert_eq!(rules[2].matcher, Matcher::LastContains("say \"hi\"".into()));
    }

    #[test]
    fn malformed_line_names_line() {
        let err = parse_script("WHEN contains \"a\" RESPOND <<<x>>>\n\nWHEN sometimes RESPOND <<<y>>>").unwrap_err();
        assert_eq!(err.line, 3);
        let err = parse_script("hello").unwrap_err();
        assert_eq!(err.line, 1);
        let err = parse_script("WHEN call 1 RESPOND <<<\nnever closed").unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn empty_script_always_errors() {
        let rules = parse_script("").unwrap();
        assert!(rules.is_empty());
        let backend = ScriptedBackend::new(rules);
        assert_eq!(backend.complete(&input("x")), Err(LlmError::NoRuleMatched { call: 1 }));
    }

    #[test]
    fn contains_ignores_system_prefix() {
        let backend = ScriptedBackend::new(parse_script(r#"WHEN contains "receipt" RESPOND <<<Assistant, receipt <r.png>>>>"#).unwrap());
        assert!(backend.complete(&input("hello")).is_err());
        assert_eq!(backend.complete(&input("my receipt")).unwrap(), "Assistant, receipt <r.png>");
    }

    #[test]
    fn nth_call_counts_calls() {
        let backend = ScriptedBackend::new(
            parse_script("WHEN call 2 RESPOND <<<two>>>\nWHEN contains \"x\" RESPOND <<<other>>>").unwrap(),
        );
        assert_eq!(backend.complete(&input("x")).unwrap(), "other");
        assert_eq!(backend.complete(&input("x")).unwrap(), "two");
        assert_eq!(backend.complete(&input("x")).unwrap(), "other");
        assert_eq!(backend.calls(), 3);
    }

    #[test]
    fn replay_is_deterministic() {
        let script = "WHEN call 1 RESPOND <<<a>>>\nWHEN last contains \"obs\" RESPOND <<<b>>>";
        let run = || {
            let b = ScriptedBackend::new(parse_script(script).unwrap());
            [input("q"), input("obs")].iter().map(|i| b.complete(i)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.script");
        std::fs::write(&path, "WHEN call 1 RESPOND <<<ok>>>\n").unwrap();
        assert_eq!(load_script(&path).unwrap().len(), 1);
        assert_eq!(load_script(&dir.path().join("missing")).unwrap_err().line, 0);
    }
}
