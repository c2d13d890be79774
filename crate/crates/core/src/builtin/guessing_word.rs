//! Guessing Word: the user asks yes/no questions to find a secret word from
//! a category. Win detection is local ([`check_guess`]); the model only ever
//! answers "yes" or "no" on question turns ([`validate_answer_turn`]).

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::puzzle::{
    assemble, plain, Blueprint, InstantiationContext, PuzzleError, PuzzleFactory, PuzzleGroup, PuzzleInstance,
    PuzzleKind,
};
use crate::tags::ParsedOutput;

pub const STRATEGY: &str = "guessing-word";
pub const SAMPLE_WORDS_JSON: &str = include_str!("../../assets/words.json");
pub const NO_QUESTIONS_YET: &str = "No questions asked yet.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordEntry {
    pub word: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub category: String,
}

#[derive(Debug, Error)]
pub enum WordListError {
    #[error("word list I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("word list JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {0}: empty word")]
    EmptyWord(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WordList {
    pub entries: Vec<WordEntry>,
}

impl WordList {
    pub fn sample() -> Self {
        Self::from_json(SAMPLE_WORDS_JSON).expect("shipped word list is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, WordListError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Plain-text format: one `word, synonym, synonym` per line; a line
    /// `# category: <name>` sets the category of the lines that follow.
    /// Other `#` lines and blank lines are skipped.
    pub fn from_text(text: &str) -> Result<Self, WordListError> {
        let mut category = String::new();
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(c) = comment.trim().strip_prefix("category:") {
                    category = c.trim().to_owned();
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let mut forms = line.split(',').map(str::trim);
            let word = forms.next().filter(|w| !w.is_empty()).ok_or(WordListError::EmptyWord(n + 1))?;
            entries.push(WordEntry {
                word: word.to_owned(),
                synonyms: forms.filter(|s| !s.is_empty()).map(str::to_owned).collect(),
                category: category.clone(),
            });
        }
        Ok(Self { entries })
    }

    /// Loads `.json` files as JSON and anything else as plain text.
    pub fn load(path: &Path) -> Result<Self, WordListError> {
        let text = fs::read_to_string(path)?;
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            Self::from_json(&text)
        } else {
            Self::from_text(&text)
        }
    }

    pub fn in_category(&self, category: &str) -> Vec<&WordEntry> {
        let category = category.trim();
        self.entries
            .iter()
            .filter(|e| category.is_empty() || e.category.eq_ignore_ascii_case(category))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    Yes,
    No,
}

impl fmt::Display for YesNo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            YesNo::Yes => "yes",
            YesNo::No => "no",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub question: String,
    pub answer: YesNo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GuessingWordConfig {
    pub category: String,
    pub answer: String,
    pub synonyms: BTreeSet<String>,
    #[serde(default)]
    pub questions_asked: Vec<QaRecord>,
}

impl GuessingWordConfig {
    /// Synonyms that normalise to the answer itself are dropped.
    pub fn new(category: &str, answer: &str, synonyms: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let key = normalize_utterance(answer);
        Self {
            category: category.to_owned(),
            answer: answer.to_owned(),
            synonyms: synonyms
                .into_iter()
                .map(Into::into)
                .filter(|s: &String| normalize_utterance(s) != key)
                .collect(),
            questions_asked: Vec::new(),
        }
    }

    pub fn from_instance(instance: &PuzzleInstance) -> Option<Self> {
        let payload = instance.answer_payload.as_ref()?;
        serde_json::from_value(serde_json::Value::Object(payload.clone())).ok()
    }
}

/// Case-fold, trim, drop terminal punctuation, strip one leading article and
/// collapse internal whitespace.
pub fn normalize_utterance(s: &str) -> String {
    let lowered = s.trim().to_lowercase();
    let trimmed = lowered.trim_end_matches(['.', '!', '?']);
    let mut words: Vec<&str> = trimmed.split_whitespace().collect();
    if words.len() > 1 && matches!(words[0], "a" | "an" | "the") {
        words.remove(0);
    }
    words.join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GuessCheck {
    pub correct: bool,
    pub matched_form: Option<String>,
}

pub fn check_guess(config: &GuessingWordConfig, utterance: &str) -> GuessCheck {
    let said = normalize_utterance(utterance);
    let matched = std::iter::once(&config.answer)
        .chain(config.synonyms.iter())
        .find(|form| normalize_utterance(form) == said)
        .cloned();
    GuessCheck {
        correct: matched.is_some(),
        matched_form: matched,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerViolation {
    pub visible_text: String,
}

impl fmt::Display for AnswerViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "expected only \"Yes\" or \"No\", got {:?}", self.visible_text)
    }
}

/// Parses a visible answer as yes/no: case-insensitive, at most one
/// trailing `.`, `!` or `?`.
pub fn yes_no(text: &str) -> Option<YesNo> {
    let t = text.trim();
    let t = t.strip_suffix(['.', '!', '?']).unwrap_or(t);
    if t.eq_ignore_ascii_case("yes") {
        Some(YesNo::Yes)
    } else if t.eq_ignore_ascii_case("no") {
        Some(YesNo::No)
    } else {
        None
    }
}

/// On a question turn the visible text must be exactly yes or no; control
/// tags alongside are always fine.
pub fn validate_answer_turn(parsed: &ParsedOutput) -> Result<YesNo, AnswerViolation> {
    yes_no(&parsed.visible_text).ok_or_else(|| AnswerViolation {
        visible_text: parsed.visible_text.clone(),
    })
}

pub fn hint_list_previous(config: &GuessingWordConfig) -> String {
    if config.questions_asked.is_empty() {
        return NO_QUESTIONS_YET.to_owned();
    }
    config
        .questions_asked
        .iter()
        .enumerate()
        .map(|(i, qa)| format!("{}. {} — {}", i + 1, qa.question, qa.answer))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_guessing_word_instance(
    group: &PuzzleGroup,
    category: &str,
    words: &WordList,
    seed: u64,
    now: DateTime<Utc>,
) -> Result<PuzzleInstance, PuzzleError> {
    assemble(group, blueprint(category, words, seed)?, now)
}

fn blueprint(category: &str, words: &WordList, seed: u64) -> Result<Blueprint, PuzzleError> {
    let candidates = words.in_category(category);
    if candidates.is_empty() {
        return Err(PuzzleError::DataSourceEmpty(format!("no words in category {category:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = candidates[rng.gen_range(0..candidates.len())];
    let category = if chosen.category.is_empty() {
        category.to_owned()
    } else {
        chosen.category.clone()
    };
    let config = GuessingWordConfig::new(&category, &chosen.word, chosen.synonyms.iter().cloned());

    let mut bp = Blueprint::new(PuzzleKind::GuessingWord);
    let synonyms = if config.synonyms.is_empty() {
        "nothing else".to_owned()
    } else {
        config
            .synonyms
            .iter()
            .map(|s| format!("\"{}\"", plain(s)))
            .collect::<Vec<_>>()
            .join(", ")
    };
    bp.bind("answer", plain(&config.answer))
        .bind("category", plain(&config.category))
        .bind("synonyms", synonyms);
    let payload = serde_json::to_value(&config).expect("config serializes");
    bp.answer_payload = payload.as_object().cloned();
    Ok(bp)
}

pub struct GuessingWordFactory;

impl PuzzleFactory for GuessingWordFactory {
    fn build(&self, group: &PuzzleGroup, ctx: &InstantiationContext<'_>) -> Result<Blueprint, PuzzleError> {
        let category = group.setting("category").unwrap_or("");
        match ctx.word_list {
            Some(words) => blueprint(category, words, ctx.seed),
            None => blueprint(category, &WordList::sample(), ctx.seed),
        }
    }
}
