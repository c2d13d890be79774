//! Timestamped text and image records used as personalised puzzle material.
//!
//! On disk the store is a directory with one `<entryId>.json` document per
//! entry under `entries/`. Images live in a shared [`MediaStore`].

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::media::{write_atomic, MediaId, MediaStore};

/// How far past the ingestion clock an event time may lie.
pub const FUTURE_TOLERANCE: Duration = Duration::hours(24);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LifeLogEntry {
    pub entry_id: String,
    pub timestamp: DateTime<Utc>,
    pub description: String,
    #[serde(default)]
    pub image_ids: Vec<MediaId>,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl LifeLogEntry {
    pub fn has_image(&self) -> bool {
        !self.image_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EntryDraft {
    pub timestamp: DateTime<Utc>,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub image_ids: Vec<MediaId>,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Error)]
pub enum LifeLogError {
    #[error("entry has neither a description nor images")]
    EmptyEntry,
    #[error("media {0} has not been uploaded")]
    UnknownMedia(MediaId),
    #[error("timestamp {0} lies in the future")]
    FutureTimestamp(DateTime<Utc>),
    #[error("invalid range: {from} is after {to}")]
    InvalidRange { from: DateTime<Utc>, to: DateTime<Utc> },
    #[error("no life-log entry qualifies")]
    DataSourceEmpty,
    #[error("life-log I/O: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt entry document {path}: {source}")]
    Corrupt {
        path: PathBuf,
        source: serde_json::Error,
    },
}

type EntryKey = (DateTime<Utc>, String);

#[derive(Debug)]
pub struct LifeLogStore {
    dir: PathBuf,
    media: MediaStore,
    entries: RwLock<BTreeMap<EntryKey, LifeLogEntry>>,
    writer: Mutex<()>,
}

impl LifeLogStore {
    /// Opens (creating if needed) the store rooted at `dir` and loads every
    /// entry document.
    pub fn open(dir: impl Into<PathBuf>, media: MediaStore) -> Result<Self, LifeLogError> {
        let dir = dir.into();
        let entries_dir = dir.join("entries");
        fs::create_dir_all(&entries_dir)?;
        let mut entries = BTreeMap::new();
        for item in fs::read_dir(&entries_dir)? {
            let path = item?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let entry = read_entry(&path)?;
            entries.insert((entry.timestamp, entry.entry_id.clone()), entry);
        }
        Ok(Self {
            dir,
            media,
            entries: RwLock::new(entries),
            writer: Mutex::new(()),
        })
    }

    pub fn media(&self) -> &MediaStore {
        &self.media
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("lifelog lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_entry(&self, draft: EntryDraft, now: DateTime<Utc>) -> Result<LifeLogEntry, LifeLogError> {
        let description = draft.description.trim().to_owned();
        if description.is_empty() && draft.image_ids.is_empty() {
            return Err(LifeLogError::EmptyEntry);
        }
        if draft.timestamp > now + FUTURE_TOLERANCE {
            return Err(LifeLogError::FutureTimestamp(draft.timestamp));
        }
        if let Some(missing) = draft.image_ids.iter().find(|id| !self.media.contains(id)) {
            return Err(LifeLogError::UnknownMedia(missing.clone()));
        }
        let entry = LifeLogEntry {
            entry_id: Uuid::new_v4().to_string(),
            timestamp: draft.timestamp,
            description,
            image_ids: draft.image_ids,
            tags: draft.tags,
        };

        let _guard = self.writer.lock().expect("lifelog writer");
        let doc = serde_json::to_vec_pretty(&entry).expect("entry serializes");
        write_atomic(&self.entry_path(&entry.entry_id), &doc)?;
        self.entries
            .write()
            .expect("lifelog lock")
            .insert((entry.timestamp, entry.entry_id.clone()), entry.clone());
        Ok(entry)
    }

    /// Entries with `from <= timestamp < to`, ascending by timestamp then id.
    pub fn query_range(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> Result<Vec<LifeLogEntry>, LifeLogError> {
        if from > to {
            return Err(LifeLogError::InvalidRange { from, to });
        }
        let entries = self.entries.read().expect("lifelog lock");
        Ok(entries
            .range((from, String::new())..(to, String::new()))
            .map(|(_, e)| e.clone())
            .collect())
    }

    pub fn all(&self) -> Vec<LifeLogEntry> {
        self.entries.read().expect("lifelog lock").values().cloned().collect()
    }

    /// Seeded uniform choice among entries timestamped within `window` before
    /// `now`.
    pub fn pick_entry_for_training(
        &self,
        window: Duration,
        require_image: bool,
        seed: u64,
        now: DateTime<Utc>,
    ) -> Result<LifeLogEntry, LifeLogError> {
        let entries = self.entries.read().expect("lifelog lock");
        let candidates: Vec<&LifeLogEntry> = entries
            .range((now - window, String::new())..)
            .map(|(_, e)| e)
            .take_while(|e| e.timestamp <= now)
            .filter(|e| !require_image || e.has_image())
            .collect();
        if candidates.is_empty() {
            return Err(LifeLogError::DataSourceEmpty);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(candidates[rng.gen_range(0..candidates.len())].clone())
    }

    /// Deletes every entry document.
    pub fn wipe(&self) -> Result<(), LifeLogError> {
        let _guard = self.writer.lock().expect("lifelog writer");
        let entries_dir = self.dir.join("entries");
        if entries_dir.exists() {
            fs::remove_dir_all(&entries_dir)?;
        }
        fs::create_dir_all(&entries_dir)?;
        self.entries.write().expect("lifelog lock").clear();
        Ok(())
    }

    fn entry_path(&self, id: &str) -> PathBuf {
        self.dir.join("entries").join(format!("{id}.json"))
    }
}

fn read_entry(path: &Path) -> Result<LifeLogEntry, LifeLogError> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|source| LifeLogError::Corrupt {
        path: path.to_owned(),
        source,
    })
}
