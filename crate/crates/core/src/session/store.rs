//! One JSONL event log per session (`<id>.jsonl`) plus `index.jsonl`,
//! which lists sessions in creation order.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{replay, validate_session_id, Session, SessionError, SessionEvent};

const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SessionError {
    SessionError::Io(format!("{}: {e}", path.display()))
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self, session_id: &str) -> Result<PathBuf, SessionError> {
        validate_session_id(session_id)?;
        Ok(self.dir.join(format!("{session_id}.jsonl")))
    }

    pub fn exists(&self, session_id: &str) -> bool {
        self.log_path(session_id)
            .map(|p| p.is_file())
            .unwrap_or(false)
    }

    /// Appends whatever part of the session's history is not on disk yet.
    /// The persisted prefix must match the session's history.
    pub fn sync(&self, session: &Session) -> Result<usize, SessionError> {
        let path = self.log_path(session.id())?;
        let new_log = !path.is_file();
        let on_disk = if new_log {
            Vec::new()
        } else {
            self.events(session.id())?
        };
        let history = session.history();
        if on_disk.len() > history.len() || on_disk[..] != history[..on_disk.len()] {
            return Err(SessionError::Corrupt {
                sequence: on_disk.len() as u64,
                message: format!(
                    "log for `{}` diverges from the session in memory",
                    session.id()
                ),
            });
        }
        let pending = &history[on_disk.len()..];
        if pending.is_empty() {
            return Ok(0);
        }
        let mut buf = String::new();
        for event in pending {
            buf.push_str(&serde_json::to_string(event).map_err(|e| io_err(&path, e))?);
            buf.push('\n');
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        file.write_all(buf.as_bytes())
            .map_err(|e| io_err(&path, e))?;
        file.sync_data().map_err(|e| io_err(&path, e))?;
        if new_log {
            self.add_to_index(&IndexEntry {
                session_id: session.id().to_string(),
                created_at: history[0].timestamp,
            })?;
        }
        Ok(pending.len())
    }

    fn add_to_index(&self, entry: &IndexEntry) -> Result<(), SessionError> {
        let path = self.dir.join(INDEX_FILE);
        let mut line = serde_json::to_string(entry).map_err(|e| io_err(&path, e))?;
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        file.write_all(line.as_bytes())
            .map_err(|e| io_err(&path, e))
    }

    pub fn events(&self, session_id: &str) -> Result<Vec<SessionEvent>, SessionError> {
        let path = self.log_path(session_id)?;
        let file = File::open(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => SessionError::NotFound(session_id.to_string()),
            _ => io_err(&path, e),
        })?;
        let mut events = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io_err(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let event: SessionEvent =
                serde_json::from_str(&line).map_err(|e| SessionError::Corrupt {
                    sequence: i as u64,
                    message: format!("line {}: {e}", i + 1),
                })?;
            events.push(event);
        }
        Ok(events)
    }

    pub fn load(&self, session_id: &str) -> Result<Session, SessionError> {
        let session = replay(self.events(session_id)?)?;
        if session.id() != session_id {
            return Err(SessionError::Corrupt {
                sequence: 0,
                message: format!("log `{session_id}` belongs to session `{}`", session.id()),
            });
        }
        Ok(session)
    }

    pub fn list(&self) -> Result<Vec<IndexEntry>, SessionError> {
        let path = self.dir.join(INDEX_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path, e)),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| io_err(&path, e)))
            .collect()
    }
}
