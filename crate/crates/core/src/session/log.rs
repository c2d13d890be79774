//! Append-only session event log: one JSON line per applied operation,
//! carrying the inputs, the raw provider responses and the resulting
//! snapshot, so a session can be restored or re-executed offline.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::warn;

use super::{Engine, Session, SessionError};
use crate::llm::{RetryPolicy, ScriptedProvider};
use crate::message::MessagePart;
use crate::puzzle::PuzzleInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "input", rename_all = "kebab-case")]
pub enum SessionOp {
    #[serde(rename_all = "camelCase")]
    Start {
        session_id: String,
        hint_budget: u32,
        instance: Box<PuzzleInstance>,
    },
    UserTurn {
        parts: Vec<MessagePart>,
    },
    Hint {},
    Abort {},
}

impl SessionOp {
    pub fn name(&self) -> &'static str {
        match self {
            SessionOp::Start { .. } => "start",
            SessionOp::UserTurn { .. } => "user-turn",
            SessionOp::Hint {} => "hint",
            SessionOp::Abort {} => "abort",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub op: SessionOp,
    pub inputs_digest: String,
    pub provider_responses: Vec<String>,
    pub at: DateTime<Utc>,
    pub snapshot: Session,
}

impl SessionEvent {
    pub fn new(op: SessionOp, at: DateTime<Utc>, provider_responses: Vec<String>, snapshot: Session) -> Self {
        Self {
            seq: snapshot.revision,
            inputs_digest: digest(&op),
            op,
            provider_responses,
            at,
            snapshot,
        }
    }
}

/// Hex SHA-256 of the operation's canonical JSON.
pub fn digest(op: &SessionOp) -> String {
    let json = serde_json::to_vec(op).expect("ops serialize");
    hex::encode(Sha256::digest(json))
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session log I/O: {0}")]
    Io(#[from] io::Error),
    #[error("{path}: line {line} is corrupt: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("invalid session id {0:?}")]
    InvalidId(String),
    #[error("session {0:?} already exists")]
    Exists(String),
}

/// Reads every complete event from a log. A torn final line (no trailing
/// newline and not parseable) is the mark of an interrupted write and is
/// skipped.
pub fn read_events(path: &Path) -> Result<Vec<SessionEvent>, StoreError> {
    let text = fs::read_to_string(path)?;
    let torn_tail = !text.is_empty() && !text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(event) => events.push(event),
            Err(_) if torn_tail && i + 1 == lines.len() => {
                warn!(path = %path.display(), "ignoring torn final log line");
            }
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path: path.to_owned(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(events)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// Directory of `<session-id>.jsonl` logs.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self, session_id: &str) -> Result<PathBuf, StoreError> {
        if !valid_id(session_id) {
            return Err(StoreError::InvalidId(session_id.to_owned()));
        }
        Ok(self.dir.join(format!("{session_id}.jsonl")))
    }

    pub fn exists(&self, session_id: &str) -> bool {
        self.log_path(session_id).is_ok_and(|p| p.exists())
    }

    /// Appends one event and syncs it to disk before returning.
    pub fn append(&self, event: &SessionEvent) -> Result<(), StoreError> {
        let path = self.log_path(&event.snapshot.session_id)?;
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        drop_torn_tail(&mut file)?;
        let mut line = serde_json::to_vec(event).expect("events serialize");
        line.push(b'\n');
        file.write_all(&line)?;
        file.sync_data()?;
        Ok(())
    }

    pub fn events(&self, session_id: &str) -> Result<Vec<SessionEvent>, StoreError> {
        read_events(&self.log_path(session_id)?)
    }

    /// The snapshot of the last persisted operation.
    pub fn load(&self, session_id: &str) -> Result<Session, SessionError> {
        let path = self.log_path(session_id).map_err(|_| SessionError::NotFound(session_id.to_owned()))?;
        if !path.exists() {
            return Err(SessionError::NotFound(session_id.to_owned()));
        }
        read_events(&path)?
            .pop()
            .map(|e| e.snapshot)
            .ok_or_else(|| SessionError::NotFound(session_id.to_owned()))
    }

    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_owned());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn wipe(&self) -> Result<(), StoreError> {
        for id in self.list()? {
            fs::remove_file(self.log_path(&id)?)?;
        }
        Ok(())
    }
}

/// Cuts an interrupted final line so the next append starts on a fresh line.
fn drop_torn_tail(file: &mut File) -> io::Result<()> {
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(());
    }
    let mut last = [0u8; 1];
    file.seek(SeekFrom::Start(len - 1))?;
    file.read_exact(&mut last)?;
    if last[0] == b'\n' {
        return Ok(());
    }
    let mut content = Vec::new();
    file.seek(SeekFrom::Start(0))?;
    file.read_to_end(&mut content)?;
    let keep = content.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    warn!(dropped = content.len() - keep, "truncating torn session log tail");
    file.set_len(keep as u64)
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("replay diverged at seq {seq} ({op}): {reason}")]
pub struct ReplayError {
    pub seq: u64,
    pub op: String,
    pub reason: String,
}

/// Re-executes every logged operation against a scripted provider built from
/// the recorded responses and checks each resulting snapshot.
pub fn replay(events: &[SessionEvent]) -> Result<Session, ReplayError> {
    let retry = RetryPolicy::immediate();
    let mut current: Option<Session> = None;
    for event in events {
        let fail = |reason: String| ReplayError {
            seq: event.seq,
            op: event.op.name().to_owned(),
            reason,
        };
        if digest(&event.op) != event.inputs_digest {
            return Err(fail("inputs digest mismatch".into()));
        }
        let provider = ScriptedProvider::replies(event.provider_responses.iter().cloned());
        let engine = Engine::new(&provider, &retry);
        let result = match (&event.op, &current) {
            (
                SessionOp::Start {
                    session_id,
                    hint_budget,
                    instance,
                },
                None,
            ) => Session::begin(session_id.clone(), (**instance).clone(), *hint_budget, engine, event.at),
            (SessionOp::Start { .. }, Some(_)) => return Err(fail("start after the session began".into())),
            (_, None) => return Err(fail("log does not begin with start".into())),
            (SessionOp::UserTurn { parts }, Some(s)) => s.user_turn(parts.clone(), engine, event.at),
            (SessionOp::Hint {}, Some(s)) => s.request_hint(event.at),
            (SessionOp::Abort {}, Some(s)) => s.abort(),
        };
        let step = result.map_err(|e| fail(format!("operation failed: {e}")))?;
        if provider.remaining() != 0 {
            return Err(fail(format!("{} recorded response(s) left unused", provider.remaining())));
        }
        if step.session != event.snapshot {
            return Err(fail("resulting state differs from the recorded snapshot".into()));
        }
        current = Some(step.session);
    }
    current.ok_or(ReplayError {
        seq: 0,
        op: "none".into(),
        reason: "empty log".into(),
    })
}
