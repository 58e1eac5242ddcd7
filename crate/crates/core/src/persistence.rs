//! Durable event logs, canonical export and deterministic replay.
//!
//! The live log is JSON lines, one event per line, synced to disk before an
//! ingest is acknowledged. Exports are canonical JSON (sorted keys, shortest
//! round-trip floats, trailing newline) so that equal states give equal
//! bytes.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::config::SessionConfig;
use crate::session::{Engine, SessionError};
use crate::tracking::{EngagementEvent, NewEvent, TrackingError};

pub const FORMAT_VERSION: u32 = 1;
pub const LOG_EXTENSION: &str = "events.jsonl";
pub const EXPORT_EXTENSION: &str = "somekone.json";

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    BadLine { line: usize, message: String },
    #[error("replay failed at seq {seq}: {message}")]
    Replay { seq: u64, message: String },
    #[error("export document is malformed: {0}")]
    Export(String),
    #[error("unsupported export format version {0}")]
    FormatVersion(u64),
    #[error("catalog digest mismatch: export has {expected}, catalog is {actual}")]
    CatalogMismatch { expected: String, actual: String },
    #[error(transparent)]
    Session(#[from] SessionError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PersistenceError + '_ {
    move |source| PersistenceError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Receives each accepted event before the session applies it.
pub trait EventSink: Send {
    fn append(&mut self, event: &EngagementEvent) -> io::Result<()>;
}

/// In-memory sink, mostly for tests.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub lines: Vec<String>,
}

impl EventSink for MemorySink {
    fn append(&mut self, event: &EngagementEvent) -> io::Result<()> {
        self.lines.push(event.to_line());
        Ok(())
    }
}

/// Appends JSON lines to `<dir>/<session>.events.jsonl`, syncing each write.
#[derive(Debug)]
pub struct FileSink {
    path: PathBuf,
    file: File,
}

impl FileSink {
    pub fn log_path(dir: &Path, session_id: &str) -> PathBuf {
        dir.join(format!("{session_id}.{LOG_EXTENSION}"))
    }

    /// Opens (creating if needed) the session log and returns the events it
    /// already holds. A torn final line is cut off with a warning.
    pub fn open(dir: &Path, session_id: &str) -> Result<(Self, Vec<EngagementEvent>), PersistenceError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = Self::log_path(dir, session_id);
        let existing = if path.exists() {
            recover_log(&path)?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok((Self { path, file }, existing))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventSink for FileSink {
    fn append(&mut self, event: &EngagementEvent) -> io::Result<()> {
        let mut line = event.to_line();
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.file.sync_data()
    }
}

/// Reads a log file. Bytes after the last newline are a torn write and
/// are truncated with a warning; every complete line must parse.
pub fn recover_log(path: &Path) -> Result<Vec<EngagementEvent>, PersistenceError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let events = read_events(&bytes[..complete])?;
    if complete < bytes.len() {
        log::warn!(
            "{}: dropping {} bytes of incomplete trailing line",
            path.display(),
            bytes.len() - complete
        );
        let file = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        file.set_len(complete as u64).map_err(io_err(path))?;
        file.sync_data().map_err(io_err(path))?;
    }
    Ok(events)
}

/// Strict JSON-lines reader; blank lines are skipped.
pub fn read_events<R: Read>(source: R) -> Result<Vec<EngagementEvent>, PersistenceError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line.map_err(|e| PersistenceError::BadLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(EngagementEvent::from_line(&line).map_err(|e| PersistenceError::BadLine {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Rebuilds `value` with every object's keys in sorted order.
fn sort_keys(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, sort_keys(v))).collect::<Map<_, _>>())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

/// Canonical serialization: sorted keys, no insignificant whitespace,
/// shortest round-trip floats, newline-terminated.
pub fn canonical_json(value: &impl Serialize) -> String {
    let value = serde_json::to_value(value).expect("exported values serialize");
    let mut text = serde_json::to_string(&sort_keys(value)).expect("values serialize");
    text.push('\n');
    text
}

/// Parts of an export needed to replay it.
#[derive(Debug, Clone, Deserialize)]
pub struct ExportHeader {
    pub format_version: u64,
    pub session_id: String,
    pub config: SessionConfig,
    pub catalog_digest: String,
    pub events: Vec<EngagementEvent>,
}

/// The export document for an engine's current state.
pub fn export(engine: &Engine) -> String {
    canonical_json(&serde_json::json!({
        "format_version": FORMAT_VERSION,
        "session_id": engine.log().session_id(),
        "config": engine.config(),
        "catalog_digest": engine.catalog().digest(),
        "events": engine.log().events(),
        "derived": engine.snapshot(),
    }))
}

/// Re-ingests `events` into a fresh engine, requiring gap-free seqs from 1.
pub fn replay(
    config: SessionConfig,
    catalog: Catalog,
    session_id: &str,
    events: impl IntoIterator<Item = EngagementEvent>,
) -> Result<Engine, PersistenceError> {
    let mut engine = Engine::new(config, catalog, session_id)?;
    for event in events {
        let expected = engine.log().next_seq();
        if event.seq != expected {
            return Err(PersistenceError::Replay {
                seq: event.seq,
                message: TrackingError::SeqGap {
                    expected,
                    found: event.seq,
                }
                .to_string(),
            });
        }
        let seq = event.seq;
        engine
            .ingest(NewEvent {
                user: event.user,
                image: event.image,
                t: event.t,
                kind: event.kind,
            })
            .map_err(|e| PersistenceError::Replay {
                seq,
                message: e.to_string(),
            })?;
    }
    Ok(engine)
}

pub fn parse_export(text: &str) -> Result<ExportHeader, PersistenceError> {
    let header: ExportHeader = serde_json::from_str(text).map_err(|e| PersistenceError::Export(e.to_string()))?;
    if header.format_version != u64::from(FORMAT_VERSION) {
        return Err(PersistenceError::FormatVersion(header.format_version));
    }
    Ok(header)
}

/// Replays an export document against `catalog`, checking the digest.
pub fn replay_export(text: &str, catalog: Catalog) -> Result<Engine, PersistenceError> {
    let header = parse_export(text)?;
    let actual = catalog.digest();
    if header.catalog_digest != actual {
        return Err(PersistenceError::CatalogMismatch {
            expected: header.catalog_digest,
            actual,
        });
    }
    header.config.validate().map_err(SessionError::from)?;
    replay(header.config, catalog, &header.session_id, header.events)
}

/// JSON-pointer-style path of the first difference between two documents.
pub fn first_difference(a: &Value, b: &Value) -> Option<String> {
    fn walk(a: &Value, b: &Value, path: &mut String) -> bool {
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
                keys.sort();
                keys.dedup();
                for k in keys {
                    let len = path.len();
                    path.push('/');
                    path.push_str(k);
                    match (x.get(k), y.get(k)) {
                        (Some(p), Some(q)) => {
                            if walk(p, q, path) {
                                return true;
                            }
                        }
                        _ => return true,
                    }
                    path.truncate(len);
                }
                false
            }
            (Value::Array(x), Value::Array(y)) => {
                for i in 0..x.len().max(y.len()) {
                    let len = path.len();
                    path.push_str(&format!("/{i}"));
                    match (x.get(i), y.get(i)) {
                        (Some(p), Some(q)) => {
                            if walk(p, q, path) {
                                return true;
                            }
                        }
                        _ => return true,
                    }
                    path.truncate(len);
                }
                false
            }
            _ => a != b,
        }
    }
    let mut path = String::new();
    walk(a, b, &mut path).then(|| if path.is_empty() { "/".to_owned() } else { path })
}
