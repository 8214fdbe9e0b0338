//! Session state, the append-only event log and snapshots.
//!
//! Every mutation is an [`Event`]. The in-memory [`TagStore`] is exactly the
//! fold of the event sequence, so replaying `events.jsonl` (optionally on top
//! of `snapshot.json`) rebuilds the state that was exported.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use patternscope::pipeline::SetKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EVENT_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("event log is inconsistent: {0}")]
    Replay(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        session_id: String,
        participant_id: String,
        set_kind: SetKind,
        record_ids: Vec<String>,
        sample_seed: u64,
        started_at_ms: u64,
        time_limit_ms: u64,
    },
    Tag {
        session_id: String,
        record_id: String,
        tagged: bool,
        at_ms: u64,
    },
    Finalized {
        session_id: String,
        at_ms: u64,
    },
    Deleted {
        session_id: String,
        at_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub participant_id: String,
    pub set_kind: SetKind,
    pub record_ids: Vec<String>,
    pub sample_seed: u64,
    pub started_at_ms: u64,
    pub time_limit_ms: u64,
    pub finalized: bool,
    /// Current tag state; the last event per record wins.
    pub tags: BTreeMap<String, bool>,
}

impl Session {
    pub fn contains(&self, record_id: &str) -> bool {
        self.record_ids.iter().any(|r| r == record_id)
    }

    /// Edits are accepted strictly before `started_at + time_limit`.
    pub fn expired_at(&self, now_ms: u64) -> bool {
        now_ms.saturating_sub(self.started_at_ms) >= self.time_limit_ms
    }

    pub fn is_open(&self, now_ms: u64) -> bool {
        !self.finalized && !self.expired_at(now_ms)
    }

    pub fn remaining_ms(&self, now_ms: u64) -> u64 {
        if self.finalized {
            return 0;
        }
        (self.started_at_ms + self.time_limit_ms).saturating_sub(now_ms)
    }

    pub fn tagged_records(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().filter(|(_, &t)| t).map(|(r, _)| r.as_str())
    }
}

/// Fold of the event log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TagStore {
    pub sessions: BTreeMap<String, Session>,
    /// Number of events folded in.
    pub applied: u64,
}

impl TagStore {
    pub fn apply(&mut self, event: &Event) -> Result<(), StoreError> {
        let missing = |id: &str| StoreError::Replay(format!("unknown session {id}"));
        match event {
            Event::SessionCreated {
                session_id,
                participant_id,
                set_kind,
                record_ids,
                sample_seed,
                started_at_ms,
                time_limit_ms,
            } => {
                if self.sessions.contains_key(session_id) {
                    return Err(StoreError::Replay(format!("duplicate session {session_id}")));
                }
                self.sessions.insert(
                    session_id.clone(),
                    Session {
                        session_id: session_id.clone(),
                        participant_id: participant_id.clone(),
                        set_kind: *set_kind,
                        record_ids: record_ids.clone(),
                        sample_seed: *sample_seed,
                        started_at_ms: *started_at_ms,
                        time_limit_ms: *time_limit_ms,
                        finalized: false,
                        tags: BTreeMap::new(),
                    },
                );
            }
            Event::Tag {
                session_id,
                record_id,
                tagged,
                ..
            } => {
                let s = self.sessions.get_mut(session_id).ok_or_else(|| missing(session_id))?;
                s.tags.insert(record_id.clone(), *tagged);
            }
            Event::Finalized { session_id, .. } => {
                let s = self.sessions.get_mut(session_id).ok_or_else(|| missing(session_id))?;
                s.finalized = true;
            }
            Event::Deleted { session_id, .. } => {
                self.sessions.remove(session_id).ok_or_else(|| missing(session_id))?;
            }
        }
        self.applied += 1;
        Ok(())
    }

    pub fn replay<'a>(events: impl IntoIterator<Item = &'a Event>) -> Result<Self, StoreError> {
        let mut store = Self::default();
        for e in events {
            store.apply(e)?;
        }
        Ok(store)
    }

    /// Open session of `participant_id`, if any.
    pub fn active_session(&self, participant_id: &str, now_ms: u64) -> Option<&Session> {
        self.sessions
            .values()
            .find(|s| s.participant_id == participant_id && s.is_open(now_ms))
    }

    /// Tagged `(record_id, participant_id, set_kind)` rows of closed
    /// (finalized or expired) sessions, sorted by participant then record.
    pub fn export_rows(&self, set_kind: Option<SetKind>, now_ms: u64) -> Vec<ExportRow> {
        let mut rows = BTreeSet::new();
        for s in self.sessions.values() {
            if s.is_open(now_ms) || set_kind.is_some_and(|k| k != s.set_kind) {
                continue;
            }
            for record in s.tagged_records() {
                rows.insert((s.participant_id.clone(), record.to_string(), s.set_kind));
            }
        }
        rows.into_iter()
            .map(|(participant_id, record_id, set_kind)| ExportRow {
                record_id,
                participant_id,
                set_kind,
                tagged: true,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRow {
    pub record_id: String,
    pub participant_id: String,
    pub set_kind: SetKind,
    pub tagged: bool,
}

/// CSV with header `record_id,participant_id,set_kind,tagged`.
pub fn export_csv(rows: &[ExportRow]) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["record_id", "participant_id", "set_kind", "tagged"])
        .expect("in-memory csv");
    for r in rows {
        wtr.write_record([
            r.record_id.as_str(),
            r.participant_id.as_str(),
            r.set_kind.as_str(),
            if r.tagged { "true" } else { "false" },
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

/// Single appender over `events.jsonl`, with periodic snapshots.
#[derive(Debug)]
pub struct EventLog {
    dir: Option<PathBuf>,
    writer: Option<BufWriter<File>>,
    snapshot_every: u64,
}

impl EventLog {
    /// A log that keeps nothing on disk.
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            writer: None,
            snapshot_every: 0,
        }
    }

    /// Opens (creating if needed) the log in `dir` and rebuilds the store
    /// from the snapshot plus the events recorded after it.
    pub fn open(dir: &Path, snapshot_every: u64) -> Result<(Self, TagStore), StoreError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| StoreError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let snapshot_path = dir.join(SNAPSHOT_FILE);
        let mut store = if snapshot_path.exists() {
            let text = fs::read_to_string(&snapshot_path).map_err(io(&snapshot_path))?;
            serde_json::from_str(&text).map_err(|source| StoreError::Parse {
                path: snapshot_path.clone(),
                line: 1,
                source,
            })?
        } else {
            TagStore::default()
        };
        let log_path = dir.join(EVENT_FILE);
        let events = read_events(&log_path)?;
        let skip = store.applied as usize;
        if skip > events.len() {
            return Err(StoreError::Replay(format!(
                "snapshot covers {skip} events but the log holds {}",
                events.len()
            )));
        }
        for e in &events[skip..] {
            store.apply(e)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io(&log_path))?;
        Ok((
            Self {
                dir: Some(dir.to_path_buf()),
                writer: Some(BufWriter::new(file)),
                snapshot_every,
            },
            store,
        ))
    }

    /// Persists `event`, then folds it into `store`.
    pub fn append(&mut self, store: &mut TagStore, event: Event) -> Result<(), StoreError> {
        if let (Some(dir), Some(w)) = (&self.dir, &mut self.writer) {
            let path = dir.join(EVENT_FILE);
            let line = serde_json::to_string(&event).expect("event serializes");
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|source| StoreError::Io { path, source })?;
        }
        store.apply(&event)?;
        if self.snapshot_every > 0 && store.applied.is_multiple_of(self.snapshot_every) {
            self.snapshot(store)?;
        }
        Ok(())
    }

    pub fn snapshot(&self, store: &TagStore) -> Result<(), StoreError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(SNAPSHOT_FILE);
        let tmp = dir.join("snapshot.json.tmp");
        let text = serde_json::to_string(store).expect("store serializes");
        fs::write(&tmp, text)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|source| StoreError::Io { path, source })
    }
}

pub fn read_events(path: &Path) -> Result<Vec<Event>, StoreError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(|source| StoreError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(events)
}
