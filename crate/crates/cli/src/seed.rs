//! Bulk life-log ingestion from a directory of entry documents.
//!
//! Each `*.json` file holds one entry or an array of entries:
//! `{"timestamp", "description", "tags", "images": ["photo.jpg"]}`, where
//! image paths are relative to the document and are uploaded to the media
//! store first.

use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use cogtrain_core::data::DataDir;
use cogtrain_core::lifelog::EntryDraft;
use serde::Deserialize;

use crate::mime_for;

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct SeedEntry {
    timestamp: DateTime<Utc>,
    #[serde(default)]
    description: String,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default)]
    images: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SeedDocument {
    One(SeedEntry),
    Many(Vec<SeedEntry>),
}

/// Ingests every document in `dir` (sorted by file name); returns the number
/// of entries added.
pub fn seed_dir(data: &DataDir, dir: &Path, now: DateTime<Utc>) -> Result<usize, String> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let mut count = 0;
    for path in paths {
        let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let entries = match serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))? {
            SeedDocument::One(e) => vec![e],
            SeedDocument::Many(es) => es,
        };
        for entry in entries {
            let mut image_ids = Vec::with_capacity(entry.images.len());
            for image in &entry.images {
                let image_path = dir.join(image);
                let bytes = fs::read(&image_path).map_err(|e| format!("{}: {e}", image_path.display()))?;
                image_ids.push(data.media.put(&bytes, mime_for(&image_path)).map_err(|e| e.to_string())?);
            }
            let draft = EntryDraft {
                timestamp: entry.timestamp,
                description: entry.description,
                image_ids,
                tags: entry.tags,
            };
            data.lifelog
                .add_entry(draft, now)
                .map_err(|e| format!("{}: {e}", path.display()))?;
            count += 1;
        }
    }
    Ok(count)
}
