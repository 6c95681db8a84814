//! Terminal front end: an interactive REPL and a scenario runner, both
//! driving turns through [`Runner`] so they produce identical traces.

pub mod scenario;

use std::fs::File;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use mmreact_core::config::{BackendKind, Config, ConfigError};
use mmreact_core::experts::fixture_key;
use mmreact_core::orchestrate::{export_trace, Engine, Timing, TraceDetail, TurnError, TurnResult};
use mmreact_core::session::{MediaKind, Role, SessionState};

use scenario::{parse_scenario, Directive};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_EXPECTATION: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;

const DIM: &str = "\x1b[2m";
const RESET: &str = "\x1b[0m";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Scripted,
    Remote,
}

#[derive(Debug, Parser)]
#[command(name = "mmreact", version, about = "Chat with a text-only model that calls vision experts")]
pub struct Cli {
    /// Config file; defaults to $MMREACT_CONFIG when set.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendArg>,
    /// Script file for the scripted backend.
    #[arg(long, global = true)]
    pub script: Option<PathBuf>,
    /// Comma-separated expert names to enable.
    #[arg(long, global = true, value_delimiter = ',')]
    pub experts: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub max_steps: Option<u32>,
    /// Append every turn's trace (one JSON record per line) to this file.
    #[arg(long, global = true)]
    pub trace_out: Option<PathBuf>,
    /// Print thoughts, actions and observations dimmed before each answer.
    #[arg(long, global = true)]
    pub show_reasoning: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Interactive session (the default).
    Repl,
    /// Run a scenario file against a fresh session.
    Batch { scenario: PathBuf },
    /// Print the fixture directory name for a media path.
    FixtureKey { path: String },
}

impl Cli {
    /// The config file plus flag overrides.
    pub fn resolve_config(&self) -> Result<Config, ConfigError> {
        let mut config = Config::discover(self.config.as_deref())?;
        if let Some(b) = self.backend {
            config.llm.backend = match b {
                BackendArg::Scripted => BackendKind::Scripted,
                BackendArg::Remote => BackendKind::Remote,
            };
        }
        if let Some(s) = &self.script {
            config.llm.script = Some(s.clone());
        }
        if let Some(e) = &self.experts {
            config.experts.enabled = Some(e.clone());
        }
        if let Some(m) = self.max_steps {
            config.limits.max_steps = m;
        }
        config.validate()?;
        Ok(config)
    }
}

/// A session plus the engine that drives it. Both front ends go through
/// [`Runner::turn`].
pub struct Runner {
    pub engine: Engine,
    pub session: SessionState,
    trace_out: Option<File>,
    pending: Vec<(String, MediaKind)>,
}

impl Runner {
    pub fn new(config: &Config, trace_out: Option<&Path>) -> Result<Self, ConfigError> {
        let mut engine = config.engine()?;
        if config.llm.backend == BackendKind::Scripted {
            engine.timing = Timing::Zero;
        }
        let session = SessionState::new(config.session_config())?;
        let trace_out = trace_out
            .map(|p| {
                File::create(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })
            })
            .transpose()?;
        Ok(Self {
            engine,
            session,
            trace_out,
            pending: Vec::new(),
        })
    }

    /// Stage a media path for the next turn. Already-registered paths are
    /// accepted again so they can be re-attached.
    pub fn upload(&mut self, path: &str) -> Result<(), String> {
        if path.is_empty() {
            return Err("empty path".into());
        }
        if self.pending.iter().any(|(p, _)| p == path) {
            return Err(format!("{path} is already staged"));
        }
        self.pending.push((path.to_string(), MediaKind::from_path(path)));
        Ok(())
    }

    pub fn turn(&mut self, text: &str) -> Result<TurnResult, TurnError> {
        let media = std::mem::take(&mut self.pending);
        let result = self.engine.run_turn(&mut self.session, text, &media, &mut |_| {});
        match &result {
            Ok(r) => {
                if let Some(f) = &mut self.trace_out {
                    let written = f.write_all(export_trace(&r.trace).as_bytes()).and_then(|_| f.flush());
                    if let Err(e) = written {
                        eprintln!("warning: could not write trace: {e}");
                    }
                }
            }
            Err(_) => self.pending = media,
        }
        result
    }

    /// Internal messages appended by the most recent turn, role-labelled.
    pub fn last_turn_reasoning(&self) -> Vec<String> {
        let messages = self.session.messages();
        let start = messages.iter().rposition(|m| m.role == Role::User).map_or(0, |i| i + 1);
        messages[start..]
            .iter()
            .filter(|m| m.role.is_internal())
            .map(|m| {
                let label = match m.role {
                    Role::Thought => "thought",
                    Role::ActionRequest => "action",
                    _ => "observation",
                };
                format!("[{} {label}] {}", m.step.unwrap_or(0), m.text)
            })
            .collect()
    }
}

/// Read lines until `/quit` or end of input.
pub fn repl(runner: &mut Runner, mut show_reasoning: bool, input: &mut dyn BufRead, out: &mut dyn Write) -> io::Result<i32> {
    writeln!(out, "Type a message, /upload <path>, /reasoning on|off, or /quit.")?;
    let mut line = String::new();
    loop {
        write!(out, "> ")?;
        out.flush()?;
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Ok(EXIT_OK);
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text == "/quit" {
            return Ok(EXIT_OK);
        }
        if let Some(path) = text.strip_prefix("/upload") {
            let path = path.trim();
            if !Path::new(path).exists() {
                writeln!(out, "no such file: {path}")?;
                continue;
            }
            match runner.upload(path) {
                Ok(()) => writeln!(out, "staged {path}")?,
                Err(e) => writeln!(out, "{e}")?,
            }
            continue;
        }
        if let Some(arg) = text.strip_prefix("/reasoning") {
            match arg.trim() {
                "on" => show_reasoning = true,
                "off" => show_reasoning = false,
                other => {
                    writeln!(out, "usage: /reasoning on|off (got {other:?})")?;
                    continue;
                }
            }
            writeln!(out, "reasoning display {}", if show_reasoning { "on" } else { "off" })?;
            continue;
        }
        if text.starts_with('/') {
            writeln!(out, "unknown command {text}")?;
            continue;
        }
        match runner.turn(text) {
            Ok(result) => {
                if show_reasoning {
                    for l in runner.last_turn_reasoning() {
                        for part in l.lines() {
                            writeln!(out, "{DIM}{part}{RESET}")?;
                        }
                    }
                }
                writeln!(out, "{}", result.final_text)?;
            }
            Err(e) => writeln!(out, "error: {e}")?,
        }
    }
}

/// Run a scenario; returns the exit code.
pub fn run_batch(runner: &mut Runner, scenario_path: &Path, out: &mut dyn Write) -> io::Result<i32> {
    let text = match std::fs::read_to_string(scenario_path) {
        Ok(t) => t,
        Err(e) => {
            writeln!(out, "cannot read {}: {e}", scenario_path.display())?;
            return Ok(EXIT_CONFIG);
        }
    };
    let steps = match parse_scenario(&text) {
        Ok(s) => s,
        Err(e) => {
            writeln!(out, "{e}")?;
            return Ok(EXIT_CONFIG);
        }
    };
    let base = scenario_path.parent().unwrap_or(Path::new("."));
    let mut last: Option<TurnResult> = None;
    let mut batch_cursor = 0;
    let mut failures = 0;

    for step in steps {
        let line = step.line;
        match step.directive {
            Directive::Upload(path) => {
                if !base.join(&path).exists() {
                    writeln!(out, "line {line}: no such file {path}")?;
                    return Ok(EXIT_CONFIG);
                }
                if let Err(e) = runner.upload(&path) {
                    writeln!(out, "line {line}: {e}")?;
                    return Ok(EXIT_CONFIG);
                }
            }
            Directive::Say(text) => match runner.turn(&text) {
                Ok(result) => {
                    writeln!(out, "turn {}: {}", runner.session.turn_counter, result.final_text)?;
                    last = Some(result);
                    batch_cursor = 0;
                }
                Err(TurnError::Backend(e)) => {
                    writeln!(out, "line {line}: model error: {e}")?;
                    return Ok(EXIT_BACKEND);
                }
                Err(e) => {
                    writeln!(out, "line {line}: {e}")?;
                    return Ok(EXIT_CONFIG);
                }
            },
            Directive::ExpectContains(needle) => {
                let got = last.as_ref().map_or("", |r| r.final_text.as_str());
                if !got.contains(&needle) {
                    failures += 1;
                    writeln!(out, "line {line}: expected the answer to contain {needle:?}")?;
                    writeln!(out, "  - expected: ...{needle}...")?;
                    writeln!(out, "  + got:      {got}")?;
                }
            }
            Directive::ExpectTraceKinds(want) => {
                let got: Vec<_> = last.as_ref().map(|r| r.kinds()).unwrap_or_default();
                if got != want {
                    failures += 1;
                    writeln!(out, "line {line}: trace kinds differ")?;
                    for i in 0..want.len().max(got.len()) {
                        let w = want.get(i).map_or("-", |k| k.as_str());
                        let g = got.get(i).map_or("-", |k| k.as_str());
                        let mark = if w == g { ' ' } else { '!' };
                        writeln!(out, " {mark} step {}: expected {w}, got {g}", i + 1)?;
                    }
                }
            }
            Directive::ExpectExperts(want) => {
                let batches: Vec<(u32, Vec<String>)> = last
                    .as_ref()
                    .map(|r| {
                        r.trace
                            .iter()
                            .filter_map(|e| match &e.detail {
                                TraceDetail::ExpertBatch { entries } => {
                                    Some((e.step, entries.iter().map(|x| x.expert.clone()).collect()))
                                }
                                _ => None,
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                match batches.get(batch_cursor) {
                    Some((_, got)) if *got == want => {}
                    Some((step, got)) => {
                        failures += 1;
                        writeln!(out, "line {line}: step {step} ran experts [{}], expected [{}]", got.join(", "), want.join(", "))?;
                    }
                    None => {
                        failures += 1;
                        writeln!(out, "line {line}: expected expert batch #{} but the turn has {}", batch_cursor + 1, batches.len())?;
                    }
                }
                batch_cursor += 1;
            }
        }
    }
    if failures > 0 {
        writeln!(out, "{failures} expectation(s) failed")?;
        Ok(EXIT_EXPECTATION)
    } else {
        Ok(EXIT_OK)
    }
}

/// Entry point shared by the binary and the tests.
pub fn run(cli: &Cli, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if let Some(Command::FixtureKey { path }) = &cli.command {
        let _ = writeln!(out, "{}", fixture_key(path));
        return EXIT_OK;
    }
    let config = match cli.resolve_config() {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let mut runner = match Runner::new(&config, cli.trace_out.as_deref()) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let status = match &cli.command {
        Some(Command::Batch { scenario }) => run_batch(&mut runner, scenario, out),
        _ => repl(&mut runner, cli.show_reasoning, input, out),
    };
    status.unwrap_or_else(|e| {
        let _ = writeln!(err, "i/o error: {e}");
        1
    })
}
