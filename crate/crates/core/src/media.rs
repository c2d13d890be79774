//! Content-addressed blob store. A blob's id is the hex SHA-256 of its bytes;
//! each blob is stored as `<id>` next to a `<id>.json` sidecar holding its MIME
//! type.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MediaId(String);

impl MediaId {
    pub fn for_bytes(bytes: &[u8]) -> Self {
        MediaId(hex::encode(Sha256::digest(bytes)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MediaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed media id {0:?}")]
pub struct MalformedMediaId(String);

impl FromStr for MediaId {
    type Err = MalformedMediaId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            Ok(MediaId(s.to_owned()))
        } else {
            Err(MalformedMediaId(s.to_owned()))
        }
    }
}

impl TryFrom<String> for MediaId {
    type Error = MalformedMediaId;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<MediaId> for String {
    fn from(id: MediaId) -> Self {
        id.0
    }
}

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("media {0} not found")]
    NotFound(MediaId),
    #[error("media store I/O: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt media metadata: {0}")]
    Metadata(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    mime: String,
    size: u64,
}

#[derive(Debug, Clone)]
pub struct MediaStore {
    dir: PathBuf,
}

impl MediaStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, MediaError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Stores `bytes` and returns its id. Storing identical bytes again is a
    /// no-op that returns the same id.
    pub fn put(&self, bytes: &[u8], mime: &str) -> Result<MediaId, MediaError> {
        let id = MediaId::for_bytes(bytes);
        let blob = self.blob_path(&id);
        if !blob.exists() {
            write_atomic(&blob, bytes)?;
        }
        let sidecar = Sidecar {
            mime: mime.to_owned(),
            size: bytes.len() as u64,
        };
        write_atomic(&self.sidecar_path(&id), &serde_json::to_vec(&sidecar)?)?;
        Ok(id)
    }

    pub fn contains(&self, id: &MediaId) -> bool {
        self.blob_path(id).is_file()
    }

    pub fn mime(&self, id: &MediaId) -> Result<String, MediaError> {
        let path = self.sidecar_path(id);
        match fs::read(&path) {
            Ok(bytes) => Ok(serde_json::from_slice::<Sidecar>(&bytes)?.mime),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(MediaError::NotFound(id.clone())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn get(&self, id: &MediaId) -> Result<Vec<u8>, MediaError> {
        match fs::read(self.blob_path(id)) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(MediaError::NotFound(id.clone())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn path_of(&self, id: &MediaId) -> PathBuf {
        self.blob_path(id)
    }

    /// Deletes every stored blob and sidecar.
    pub fn wipe(&self) -> Result<(), MediaError> {
        if self.dir.exists() {
            fs::remove_dir_all(&self.dir)?;
        }
        fs::create_dir_all(&self.dir)?;
        Ok(())
    }

    fn blob_path(&self, id: &MediaId) -> PathBuf {
        self.dir.join(id.as_str())
    }

    fn sidecar_path(&self, id: &MediaId) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }
}

/// Writes through a temporary file and renames it into place so readers never
/// observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    use std::io::Write;

    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_bytes_same_id() {
        let dir = tempfile::tempdir().unwrap();
        let store = MediaStore::open(dir.path()).unwrap();
        let a = store.put(b"lotus root", "image/jpeg").unwrap();
        let b = store.put(b"lotus root", "image/jpeg").unwrap();
        assert_eq!(a, b);
        assert_eq!(store.get(&a).unwrap(), b"lotus root");
        assert_eq!(store.mime(&a).unwrap(), "image/jpeg");
    }

    #[test]
    fn missing_blob() {
        let dir = tempfile::tempdir().unwrap();
        let store = MediaStore::open(dir.path()).unwrap();
        let id = MediaId::for_bytes(b"never stored");
        assert!(!store.contains(&id));
        assert!(matches!(store.get(&id), Err(MediaError::NotFound(_))));
    }

    #[test]
    fn id_parsing() {
        let id = MediaId::for_bytes(b"x");
        assert_eq!(id.as_str().parse::<MediaId>().unwrap(), id);
        assert!("../etc/passwd".parse::<MediaId>().is_err());
        assert!(serde_json::from_str::<MediaId>("\"abc\"").is_err());
    }
}
