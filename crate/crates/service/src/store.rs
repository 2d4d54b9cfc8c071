//! Append-only JSONL log of generated playlists and engagement events.
//!
//! One line per entry; a playlist and its generation record share a line,
//! so they persist together. Writers are serialized; readers see the
//! in-memory state, which only ever grows. Compaction rewrites the log to a
//! temporary file and renames it into place.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use t2p_core::{EventType, GenerationRecord, Playlist, PlaylistEvent};
use thiserror::Error;

pub const LOG_FILE: &str = "log.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt log line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("unknown playlist {0}")]
    UnknownPlaylist(String),
    #[error("event at {occurred_at} precedes playlist creation at {created_at}")]
    EventBeforeCreation {
        occurred_at: DateTime<Utc>,
        created_at: DateTime<Utc>,
    },
    #[error("playlist {0} already stored")]
    DuplicatePlaylist(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub track_id: String,
    pub title: String,
    pub artist_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredPlaylist {
    pub playlist: Playlist,
    pub record: GenerationRecord,
    /// Display fields captured at generation time, so reads survive reloads.
    pub tracks: Vec<TrackSummary>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Entry {
    Generation(Box<StoredPlaylist>),
    Event(PlaylistEvent),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventOutcome {
    Stored,
    Duplicate,
}

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    pub fsync: bool,
    pub compact_every: usize,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            fsync: true,
            compact_every: 10_000,
        }
    }
}

type EventKey = (String, EventType, DateTime<Utc>);

#[derive(Default)]
struct State {
    playlists: HashMap<String, Arc<StoredPlaylist>>,
    order: Vec<String>,
    events: Vec<PlaylistEvent>,
    event_keys: HashSet<EventKey>,
}

impl State {
    fn apply(&mut self, entry: Entry) {
        match entry {
            Entry::Generation(p) => {
                let id = p.playlist.playlist_id.clone();
                if self.playlists.insert(id.clone(), Arc::new(*p)).is_none() {
                    self.order.push(id);
                }
            }
            Entry::Event(e) => {
                let key = (e.playlist_id.clone(), e.event_type, e.occurred_at);
                if self.event_keys.insert(key) {
                    self.events.push(e);
                }
            }
        }
    }
}

struct Writer {
    file: File,
    appends: usize,
}

pub struct Store {
    dir: PathBuf,
    options: StoreOptions,
    state: RwLock<State>,
    writer: Mutex<Writer>,
}

fn open_append(path: &Path) -> std::io::Result<File> {
    OpenOptions::new().create(true).append(true).open(path)
}

impl Store {
    /// Replays the log. A torn final line (crash mid-write) is dropped; any
    /// other unparseable line is an error.
    pub fn open(dir: impl Into<PathBuf>, options: StoreOptions) -> Result<Self, StoreError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(LOG_FILE);
        let mut state = State::default();
        let mut torn = false;
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            let lines: Vec<&str> = text.lines().collect();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Entry>(line) {
                    Ok(Entry::Event(e)) if !state.playlists.contains_key(&e.playlist_id) => {
                        tracing::warn!(line = i + 1, playlist = %e.playlist_id, "skipping event for unknown playlist");
                    }
                    Ok(entry) => state.apply(entry),
                    Err(e) if i + 1 == lines.len() && !text.ends_with('\n') => {
                        tracing::warn!(line = i + 1, error = %e, "dropping torn final log line");
                        torn = true;
                    }
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            line: i + 1,
                            reason: e.to_string(),
                        })
                    }
                }
            }
        }
        let store = Store {
            writer: Mutex::new(Writer {
                file: open_append(&path)?,
                appends: 0,
            }),
            dir,
            options,
            state: RwLock::new(state),
        };
        if torn {
            store.compact()?;
        }
        Ok(store)
    }

    pub fn path(&self) -> PathBuf {
        self.dir.join(LOG_FILE)
    }

    fn write_line(&self, writer: &mut Writer, entry: &Entry) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(entry).map_err(std::io::Error::other)?;
        line.push('\n');
        writer.file.write_all(line.as_bytes())?;
        if self.options.fsync {
            writer.file.sync_data()?;
        }
        writer.appends += 1;
        Ok(())
    }

    fn maybe_compact(&self, writer: &mut Writer) -> Result<(), StoreError> {
        if self.options.compact_every > 0 && writer.appends >= self.options.compact_every {
            self.compact_locked(writer)?;
        }
        Ok(())
    }

    pub fn insert_generation(&self, stored: StoredPlaylist) -> Result<Arc<StoredPlaylist>, StoreError> {
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let id = stored.playlist.playlist_id.clone();
        if self.read().playlists.contains_key(&id) {
            return Err(StoreError::DuplicatePlaylist(id));
        }
        let entry = Entry::Generation(Box::new(stored));
        self.write_line(&mut writer, &entry)?;
        self.write().apply(entry);
        self.maybe_compact(&mut writer)?;
        Ok(self.read().playlists[&id].clone())
    }

    /// Idempotent per (playlist, event type, timestamp).
    pub fn record_event(&self, event: PlaylistEvent) -> Result<EventOutcome, StoreError> {
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        {
            let state = self.read();
            let stored = state
                .playlists
                .get(&event.playlist_id)
                .ok_or_else(|| StoreError::UnknownPlaylist(event.playlist_id.clone()))?;
            if event.occurred_at < stored.playlist.created_at {
                return Err(StoreError::EventBeforeCreation {
                    occurred_at: event.occurred_at,
                    created_at: stored.playlist.created_at,
                });
            }
            let key = (event.playlist_id.clone(), event.event_type, event.occurred_at);
            if state.event_keys.contains(&key) {
                return Ok(EventOutcome::Duplicate);
            }
        }
        let entry = Entry::Event(event);
        self.write_line(&mut writer, &entry)?;
        self.write().apply(entry);
        self.maybe_compact(&mut writer)?;
        Ok(EventOutcome::Stored)
    }

    pub fn playlist(&self, id: &str) -> Option<Arc<StoredPlaylist>> {
        self.read().playlists.get(id).cloned()
    }

    pub fn playlist_count(&self) -> usize {
        self.read().order.len()
    }

    pub fn records(&self) -> Vec<GenerationRecord> {
        let state = self.read();
        state.order.iter().map(|id| state.playlists[id].record.clone()).collect()
    }

    pub fn events(&self) -> Vec<PlaylistEvent> {
        self.read().events.clone()
    }

    pub fn compact(&self) -> Result<(), StoreError> {
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        self.compact_locked(&mut writer)
    }

    /// Playlists in insertion order, then events: every event follows its
    /// playlist.
    fn compact_locked(&self, writer: &mut Writer) -> Result<(), StoreError> {
        let path = self.path();
        let tmp = self.dir.join(format!("{LOG_FILE}.tmp"));
        {
            let state = self.read();
            let mut out = std::io::BufWriter::new(File::create(&tmp)?);
            for id in &state.order {
                let entry = Entry::Generation(Box::new((*state.playlists[id]).clone()));
                serde_json::to_writer(&mut out, &entry).map_err(std::io::Error::other)?;
                out.write_all(b"\n")?;
            }
            for e in &state.events {
                serde_json::to_writer(&mut out, &Entry::Event(e.clone())).map_err(std::io::Error::other)?;
                out.write_all(b"\n")?;
            }
            out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        std::fs::rename(&tmp, &path)?;
        writer.file = open_append(&path)?;
        writer.appends = 0;
        Ok(())
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, State> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }
}
