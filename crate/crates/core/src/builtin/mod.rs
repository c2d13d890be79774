//! The two shipped puzzle groups: Life Recall and Guessing Word.

pub mod guessing_word;
pub mod life_recall;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::puzzle::{GroupConfig, PuzzleGroup};
use crate::tags::{ComponentName, ComponentTag};

pub use guessing_word::{
    check_guess, hint_list_previous, validate_answer_turn, GuessCheck, GuessingWordConfig, QaRecord, WordEntry,
    WordList, YesNo,
};
pub use life_recall::{build_life_recall_instance, LifeRecallConfig};

pub const LIFE_RECALL_TOML: &str = include_str!("../../assets/groups/life-recall.toml");
pub const GUESSING_WORD_TOML: &str = include_str!("../../assets/groups/guessing-word.toml");

/// The recall dimensions tracked in Life Recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    When,
    Where,
    What,
    Why,
    Who,
    How,
}

impl Slot {
    pub const ALL: [Slot; 6] = [Slot::When, Slot::Where, Slot::What, Slot::Why, Slot::Who, Slot::How];

    pub fn all() -> BTreeSet<Slot> {
        Slot::ALL.into_iter().collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Slot::When => "when",
            Slot::Where => "where",
            Slot::What => "what",
            Slot::Why => "why",
            Slot::Who => "who",
            Slot::How => "how",
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Slot {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Slot::ALL
            .into_iter()
            .find(|slot| slot.as_str() == s)
            .ok_or_else(|| s.to_owned())
    }
}

/// Union of `covered` with the slots named by a progress tag. Names outside
/// the six-W set are ignored; non-progress tags leave the set unchanged.
pub fn coverage_update(covered: &BTreeSet<Slot>, tag: &ComponentTag) -> BTreeSet<Slot> {
    let mut out = covered.clone();
    if tag.name() != ComponentName::Progress {
        return out;
    }
    for name in tag.covered() {
        match name.parse::<Slot>() {
            Ok(slot) => {
                out.insert(slot);
            }
            Err(unknown) => warn!(slot = %unknown, "ignoring unknown recall slot in progress tag"),
        }
    }
    out
}

pub fn builtin_groups() -> Vec<PuzzleGroup> {
    [LIFE_RECALL_TOML, GUESSING_WORD_TOML]
        .into_iter()
        .map(|text| {
            GroupConfig::from_toml(text)
                .and_then(PuzzleGroup::from_config)
                .expect("shipped group config is valid")
        })
        .collect()
}
