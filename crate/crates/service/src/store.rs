//! On-disk state: content-addressed media files and one append-only record
//! log per session.
//!
//! ```text
//! <data_dir>/media/<sha256 of bytes>.<ext>
//! <data_dir>/sessions/<session id>.jsonl
//! ```
//!
//! A session log starts with a `created` record, followed by `media`,
//! `message` and `turn` records in the order they were committed. Replaying
//! the records rebuilds the session exactly.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use mmreact_core::orchestrate::TraceEvent;
use mmreact_core::session::{MediaHandle, Message, SessionConfig, SessionError, SessionState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage failure at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt record in {path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Created {
        session_id: String,
        created_at: u64,
        config: SessionConfig,
    },
    Media {
        handle: MediaHandle,
    },
    Message {
        message: Message,
    },
    Turn {
        turn: u64,
        trace: Vec<TraceEvent>,
    },
}

/// A session rebuilt from its log.
#[derive(Debug, Clone)]
pub struct Replayed {
    pub state: SessionState,
    pub created_at: u64,
    pub turns: Vec<Vec<TraceEvent>>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["media", "sessions"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        let root = fs::canonicalize(&root).map_err(io_err(&root))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Store bytes under their digest, keeping the original extension.
    /// Identical bytes always map to the same path.
    pub fn put_media(&self, bytes: &[u8], original_name: &str) -> Result<PathBuf, StoreError> {
        let digest = hex::encode(Sha256::digest(bytes));
        let ext = Path::new(original_name)
            .extension()
            .and_then(|e| e.to_str())
            .filter(|e| !e.is_empty() && e.chars().all(|c| c.is_ascii_alphanumeric()))
            .map(str::to_ascii_lowercase);
        let name = match ext {
            Some(ext) => format!("{digest}.{ext}"),
            None => digest,
        };
        let path = self.root.join("media").join(name);
        if !path.exists() {
            let tmp = path.with_extension("partial");
            fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
            fs::rename(&tmp, &path).map_err(io_err(&path))?;
        }
        Ok(path)
    }

    fn log_path(&self, session_id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{session_id}.jsonl"))
    }

    pub fn append(&self, session_id: &str, records: &[Record]) -> Result<(), StoreError> {
        let path = self.log_path(session_id);
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r).expect("records serialize"));
            text.push('\n');
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        file.write_all(text.as_bytes()).map_err(io_err(&path))?;
        file.sync_data().map_err(io_err(&path))
    }

    pub fn replay(&self, path: &Path) -> Result<Replayed, StoreError> {
        let file = File::open(path).map_err(io_err(path))?;
        let corrupt = |line: usize, message: String| StoreError::Corrupt {
            path: path.to_path_buf(),
            line,
            message,
        };
        let session_err = |line: usize| move |e: SessionError| corrupt(line, e.to_string());
        let mut replayed: Option<Replayed> = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line).map_err(|e| corrupt(n, e.to_string()))?;
            match (record, replayed.as_mut()) {
                (Record::Created { session_id, created_at, config }, None) => {
                    let state = SessionState::with_id(session_id, config).map_err(session_err(n))?;
                    replayed = Some(Replayed {
                        state,
                        created_at,
                        turns: Vec::new(),
                    });
                }
                (Record::Created { .. }, Some(_)) => return Err(corrupt(n, "second created record".into())),
                (_, None) => return Err(corrupt(n, "log does not start with a created record".into())),
                (Record::Media { handle }, Some(r)) => r.state.restore_media(handle).map_err(session_err(n))?,
                (Record::Message { message }, Some(r)) => r.state.restore_message(message).map_err(session_err(n))?,
                (Record::Turn { turn, trace }, Some(r)) => {
                    if turn != r.turns.len() as u64 + 1 {
                        return Err(corrupt(n, format!("turn {turn} out of order")));
                    }
                    r.turns.push(trace);
                    r.state.turn_counter = turn;
                }
            }
        }
        replayed.ok_or_else(|| corrupt(0, "empty log".into()))
    }

    /// Every session log under the data directory.
    pub fn replay_all(&self) -> Result<Vec<Replayed>, StoreError> {
        let dir = self.root.join("sessions");
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
            .collect();
        paths.sort();
        paths.iter().map(|p| self.replay(p)).collect()
    }
}
