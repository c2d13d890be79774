//! On-disk layout shared by the CLI and the service:
//! `media/`, `lifelog/entries/`, `sessions/` and optional extra group
//! configs in `groups/`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::lifelog::{LifeLogError, LifeLogStore};
use crate::media::{MediaError, MediaStore};
use crate::puzzle::{PuzzleError, PuzzleRegistry};
use crate::session::{SessionStore, StoreError};

#[derive(Debug, Error)]
pub enum DataDirError {
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error(transparent)]
    LifeLog(#[from] LifeLogError),
    #[error(transparent)]
    Sessions(#[from] StoreError),
    #[error(transparent)]
    Groups(#[from] PuzzleError),
}

#[derive(Debug, Clone)]
pub struct DataDir {
    root: PathBuf,
    pub media: MediaStore,
    pub lifelog: Arc<LifeLogStore>,
    pub sessions: SessionStore,
}

impl DataDir {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, DataDirError> {
        let root = root.into();
        let media = MediaStore::open(root.join("media"))?;
        let lifelog = Arc::new(LifeLogStore::open(root.join("lifelog"), media.clone())?);
        let sessions = SessionStore::open(root.join("sessions"))?;
        Ok(Self {
            root,
            media,
            lifelog,
            sessions,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Built-in groups plus any `groups/*.toml` in the data directory.
    pub fn registry(&self) -> Result<PuzzleRegistry, DataDirError> {
        let mut registry = PuzzleRegistry::with_builtin_groups();
        let groups = self.root.join("groups");
        if groups.is_dir() {
            registry.load_dir(&groups)?;
        }
        Ok(registry)
    }

    /// Removes all sessions, life-log entries and media.
    pub fn wipe(&self) -> Result<(), DataDirError> {
        self.sessions.wipe()?;
        self.lifelog.wipe()?;
        self.media.wipe()?;
        Ok(())
    }
}
