//! Life Recall: the user reconstructs a recent life-log episode along the six
//! recall dimensions, helped by a text hint and then the entry's photo.

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::Slot;
use crate::lifelog::LifeLogEntry;
use crate::media::{MediaId, MediaStore};
use crate::message::MessagePart;
use crate::puzzle::{
    assemble, plain, Blueprint, HintMessage, InstantiationContext, PuzzleError, PuzzleFactory, PuzzleGroup,
    PuzzleInstance, PuzzleKind,
};

pub const STRATEGY: &str = "life-recall";
pub const TEXT_HINT_ID: &str = "h1";
pub const IMAGE_HINT_ID: &str = "h2";
/// Entry tag prefix that supplies an explicit text hint, e.g.
/// `hint:a crunchy white root with holes`.
pub const HINT_TAG_PREFIX: &str = "hint:";

const DEFAULT_WINDOW_HOURS: i64 = 48;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LifeRecallConfig {
    pub entry_ref: String,
    pub required_slots: BTreeSet<Slot>,
    pub text_hint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_hint_media_id: Option<MediaId>,
}

impl LifeRecallConfig {
    pub fn for_entry(entry: &LifeLogEntry) -> Self {
        Self {
            entry_ref: entry.entry_id.clone(),
            required_slots: Slot::all(),
            text_hint: text_hint(entry),
            image_hint_media_id: entry.image_ids.first().cloned(),
        }
    }
}

fn text_hint(entry: &LifeLogEntry) -> String {
    entry
        .tags
        .iter()
        .find_map(|t| t.strip_prefix(HINT_TAG_PREFIX))
        .map(str::trim)
        .filter(|h| !h.is_empty())
        .map(str::to_owned)
        .unwrap_or_else(|| {
            let opening: Vec<&str> = entry.description.split_whitespace().take(3).collect();
            format!(
                "Think back to {} around {}. Your note about it begins: \"{}...\"",
                entry.timestamp.format("%A"),
                entry.timestamp.format("%H:%M"),
                opening.join(" ")
            )
        })
}

/// Builds a Life Recall instance for `entry`. Prepared hints are the text
/// hint first and, when the entry has a photo, the photo second.
pub fn build_life_recall_instance(
    entry: &LifeLogEntry,
    group: &PuzzleGroup,
    media: &MediaStore,
    now: DateTime<Utc>,
) -> Result<PuzzleInstance, PuzzleError> {
    assemble(group, blueprint(entry, media)?, now)
}

fn blueprint(entry: &LifeLogEntry, media: &MediaStore) -> Result<Blueprint, PuzzleError> {
    if entry.description.trim().is_empty() {
        return Err(PuzzleError::InvalidEntry(format!(
            "life-log entry {} has no description",
            entry.entry_id
        )));
    }
    let config = LifeRecallConfig::for_entry(entry);

    let mut bp = Blueprint::new(PuzzleKind::LifeRecall);
    let mut catalog = vec![format!("- [[hint id=\"{TEXT_HINT_ID}\"]] a written clue")];
    bp.prepared_hints
        .push(HintMessage::new(TEXT_HINT_ID, vec![MessagePart::text(config.text_hint.clone())]));
    if let Some(image) = &config.image_hint_media_id {
        let mime = media
            .mime(image)
            .unwrap_or_else(|_| "application/octet-stream".to_owned());
        bp.prepared_hints
            .push(HintMessage::new(IMAGE_HINT_ID, vec![MessagePart::image(image.clone(), mime)]));
        catalog.push(format!("- [[hint id=\"{IMAGE_HINT_ID}\"]] the photo from the record"));
    }

    let slots: Vec<&str> = Slot::ALL.iter().map(|s| s.as_str()).collect();
    bp.bind("entry_timestamp", entry.timestamp.to_rfc3339())
        .bind("entry_time_human", entry.timestamp.format("%A %-d %B %Y, %H:%M UTC").to_string())
        .bind("day_phrase", entry.timestamp.format("%A %-d %B").to_string())
        .bind("description", plain(&entry.description))
        .bind("slot_list", slots.join(", "))
        .bind("hint_catalog", plain(&catalog.join("\n")));

    let payload = serde_json::to_value(&config).expect("config serializes");
    bp.answer_payload = payload.as_object().cloned();
    bp.slot_spec = Some(config.required_slots);
    Ok(bp)
}

pub struct LifeRecallFactory;

impl PuzzleFactory for LifeRecallFactory {
    fn build(&self, group: &PuzzleGroup, ctx: &InstantiationContext<'_>) -> Result<Blueprint, PuzzleError> {
        let lifelog = ctx
            .lifelog
            .ok_or_else(|| PuzzleError::DataSourceEmpty("no life log attached".into()))?;
        let hours = match group.setting("window_hours") {
            Some(h) => h
                .parse::<i64>()
                .map_err(|_| PuzzleError::InvalidGroup(format!("window_hours {h:?} is not an integer")))?,
            None => DEFAULT_WINDOW_HOURS,
        };
        let require_image = group.setting("require_image") == Some("true");
        let entry = lifelog.pick_entry_for_training(Duration::hours(hours), require_image, ctx.seed, ctx.now)?;
        blueprint(&entry, lifelog.media())
    }
}
