//! Control protocol embedded in model output.
//!
//! Grammar:
//!
//! ```text
//! output  := ws* plan? body
//! plan    := "<plan>" any-text "</plan>"
//! tag     := "[[" name ( ws+ key "=" value )* ws* "]]"
//! name    := [a-z_][a-z0-9_]*
//! key     := [a-z_][a-z0-9_]*
//! value   := '"' ( [^"\\] | '\\"' | '\\\\' )* '"'
//! ```
//!
//! Registered tag names are `draw`, `end`, `rating`, `hint` and `progress`.
//! Everything inside plan blocks is hidden. Tag spans that fail the grammar
//! or registration stay in the visible text verbatim and are also reported
//! in [`ParsedOutput::unknown_spans`].

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::MessagePart;
use crate::session::Outcome;

const PLAN_OPEN: &str = "<plan>";
const PLAN_CLOSE: &str = "</plan>";
const TAG_OPEN: &str = "[[";
const TAG_CLOSE: &str = "]]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentName {
    Draw,
    End,
    Rating,
    Hint,
    Progress,
}

impl ComponentName {
    pub const ALL: [ComponentName; 5] = [
        ComponentName::Draw,
        ComponentName::End,
        ComponentName::Rating,
        ComponentName::Hint,
        ComponentName::Progress,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentName::Draw => "draw",
            ComponentName::End => "end",
            ComponentName::Rating => "rating",
            ComponentName::Hint => "hint",
            ComponentName::Progress => "progress",
        }
    }

    fn required_param(self) -> Option<&'static str> {
        match self {
            ComponentName::Draw => Some("kind"),
            ComponentName::End => None,
            ComponentName::Rating => Some("score"),
            ComponentName::Hint => Some("id"),
            ComponentName::Progress => Some("covered"),
        }
    }
}

impl fmt::Display for ComponentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComponentName {
    type Err = TagError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ComponentName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| TagError::UnknownName(s.to_owned()))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TagError {
    #[error("unknown component {0:?}")]
    UnknownName(String),
    #[error("{name} tag requires parameter {param:?}")]
    MissingParam { name: ComponentName, param: &'static str },
    #[error("rating score {0:?} is not an integer in 1..=5")]
    BadScore(String),
    #[error("invalid parameter key {0:?}")]
    BadKey(String),
}

/// A registered control component with its parameters in source order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTag", into = "RawTag")]
pub struct ComponentTag {
    name: ComponentName,
    params: IndexMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct RawTag {
    name: ComponentName,
    #[serde(default)]
    params: IndexMap<String, String>,
}

impl TryFrom<RawTag> for ComponentTag {
    type Error = TagError;

    fn try_from(raw: RawTag) -> Result<Self, Self::Error> {
        ComponentTag::new(raw.name, raw.params)
    }
}

impl From<ComponentTag> for RawTag {
    fn from(tag: ComponentTag) -> Self {
        RawTag {
            name: tag.name,
            params: tag.params,
        }
    }
}

impl ComponentTag {
    pub fn new(name: ComponentName, params: IndexMap<String, String>) -> Result<Self, TagError> {
        if let Some(bad) = params.keys().find(|k| !is_ident(k)) {
            return Err(TagError::BadKey(bad.clone()));
        }
        if let Some(param) = name.required_param() {
            if !params.contains_key(param) {
                return Err(TagError::MissingParam { name, param });
            }
        }
        if name == ComponentName::Rating {
            let score = &params["score"];
            if parse_score(score).is_none() {
                return Err(TagError::BadScore(score.clone()));
            }
        }
        Ok(Self { name, params })
    }

    pub fn with_params<'a>(
        name: ComponentName,
        params: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, TagError> {
        let params = params
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v.to_owned()))
            .collect();
        Self::new(name, params)
    }

    pub fn end() -> Self {
        Self {
            name: ComponentName::End,
            params: IndexMap::new(),
        }
    }

    pub fn name(&self) -> ComponentName {
        self.name
    }

    pub fn params(&self) -> &IndexMap<String, String> {
        &self.params
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    /// Score of a rating tag; always in 1..=5 by construction.
    pub fn score(&self) -> Option<u8> {
        match self.name {
            ComponentName::Rating => self.param("score").and_then(parse_score),
            _ => None,
        }
    }

    /// Slot names listed by a progress tag, trimmed and lower-cased.
    pub fn covered(&self) -> Vec<String> {
        match (self.name, self.param("covered")) {
            (ComponentName::Progress, Some(list)) => list
                .split(',')
                .map(|s| s.trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect(),
            _ => Vec::new(),
        }
    }

    fn render(&self) -> String {
        let mut out = String::from(TAG_OPEN);
        out.push_str(self.name.as_str());
        for (k, v) in &self.params {
            out.push(' ');
            out.push_str(k);
            out.push_str("=\"");
            for c in v.chars() {
                if c == '"' || c == '\\' {
                    out.push('\\');
                }
                out.push(c);
            }
            out.push('"');
        }
        out.push_str(TAG_CLOSE);
        out
    }
}

fn parse_score(s: &str) -> Option<u8> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse::<u8>().ok().filter(|n| (1..=5).contains(n))
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some('a'..='z' | '_'))
        && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_'))
}

/// Raw model text decomposed into its hidden, visible and control parts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParsedOutput {
    pub plan: Option<String>,
    pub visible_text: String,
    pub tags: Vec<ComponentTag>,
    pub unknown_spans: Vec<String>,
}

impl ParsedOutput {
    pub fn text(visible: impl Into<String>) -> Self {
        Self {
            visible_text: visible.into(),
            ..Self::default()
        }
    }

    pub fn has_tag(&self, name: ComponentName) -> bool {
        self.tags.iter().any(|t| t.name == name)
    }

    pub fn tags_named(&self, name: ComponentName) -> impl Iterator<Item = &ComponentTag> {
        self.tags.iter().filter(move |t| t.name == name)
    }
}

enum Piece<'a> {
    Text(&'a str),
    Cut,
}

/// Splits raw model output into plan, visible text and tags. Total over any
/// input string.
pub fn parse_model_output(raw: &str) -> ParsedOutput {
    let mut plans = Vec::new();
    let body = strip_plans(raw, &mut plans);

    let mut pieces = Vec::new();
    let mut tags = Vec::new();
    let mut unknown_spans = Vec::new();
    for piece in body {
        match piece {
            Piece::Cut => pieces.push(Piece::Cut),
            Piece::Text(text) => scan_tags(text, &mut pieces, &mut tags, &mut unknown_spans),
        }
    }

    ParsedOutput {
        plan: if plans.is_empty() {
            None
        } else {
            Some(plans.join("\n"))
        },
        visible_text: join_pieces(&pieces),
        tags,
        unknown_spans,
    }
}

/// Removes every plan block. The leading block is the canonical plan; any
/// later block (or an unterminated one) is hidden the same way so that plan
/// content never leaks into visible text.
fn strip_plans<'a>(raw: &'a str, plans: &mut Vec<String>) -> Vec<Piece<'a>> {
    let mut pieces = Vec::new();
    let mut rest = raw;
    loop {
        let open = rest.find(PLAN_OPEN);
        let close = rest.find(PLAN_CLOSE);
        match (open, close) {
            (None, None) => {
                pieces.push(Piece::Text(rest));
                break;
            }
            // stray closing delimiter
            (o, Some(c)) if o.is_none_or(|o| c < o) => {
                pieces.push(Piece::Text(&rest[..c]));
                pieces.push(Piece::Cut);
                rest = &rest[c + PLAN_CLOSE.len()..];
            }
            (Some(o), _) => {
                pieces.push(Piece::Text(&rest[..o]));
                pieces.push(Piece::Cut);
                let inner = &rest[o + PLAN_OPEN.len()..];
                match inner.find(PLAN_CLOSE) {
                    Some(c) => {
                        plans.push(inner[..c].to_owned());
                        rest = &inner[c + PLAN_CLOSE.len()..];
                    }
                    None => {
                        plans.push(inner.to_owned());
                        break;
                    }
                }
            }
            (None, Some(_)) => unreachable!(),
        }
    }
    pieces
}

fn scan_tags<'a>(
    text: &'a str,
    pieces: &mut Vec<Piece<'a>>,
    tags: &mut Vec<ComponentTag>,
    unknown: &mut Vec<String>,
) {
    let mut cursor = 0;
    let mut search = 0;
    while let Some(rel) = text[search..].find(TAG_OPEN) {
        let start = search + rel;
        match scan_tag(&text[start..]) {
            Scan::Tag(tag, len) => {
                pieces.push(Piece::Text(&text[cursor..start]));
                pieces.push(Piece::Cut);
                tags.push(tag);
                cursor = start + len;
                search = cursor;
            }
            Scan::Rejected(len) => {
                unknown.push(text[start..start + len].to_owned());
                search = start + len;
            }
        }
    }
    pieces.push(Piece::Text(&text[cursor..]));
}

enum Scan {
    Tag(ComponentTag, usize),
    Rejected(usize),
}

fn scan_tag(s: &str) -> Scan {
    match scan_syntax(s) {
        Some((name, params, len)) => match name
            .parse::<ComponentName>()
            .and_then(|n| ComponentTag::new(n, params))
        {
            Ok(tag) => Scan::Tag(tag, len),
            Err(_) => Scan::Rejected(len),
        },
        None => Scan::Rejected(malformed_span_len(s)),
    }
}

/// Extent of a span that opened with `[[` but did not parse: up to and
/// including the next `]]`, unless another `[[` starts first.
fn malformed_span_len(s: &str) -> usize {
    let after = &s[TAG_OPEN.len()..];
    let close = after.find(TAG_CLOSE).map(|i| i + TAG_CLOSE.len());
    let reopen = after.find(TAG_OPEN);
    let end = match (close, reopen) {
        (Some(c), Some(r)) if r < c => r,
        (Some(c), _) => c,
        (None, Some(r)) => r,
        (None, None) => after
            .find(char::is_whitespace)
            .unwrap_or(after.len()),
    };
    let span = &after[..end];
    TAG_OPEN.len() + span.trim_end().len()
}

fn scan_syntax(s: &str) -> Option<(String, IndexMap<String, String>, usize)> {
    let bytes = s.as_bytes();
    let mut i = TAG_OPEN.len();
    let name_len = ident_len(&s[i..]);
    if name_len == 0 {
        return None;
    }
    let name = s[i..i + name_len].to_owned();
    i += name_len;
    let mut params = IndexMap::new();
    loop {
        let ws = s[i..].len() - s[i..].trim_start().len();
        i += ws;
        if s[i..].starts_with(TAG_CLOSE) {
            return Some((name, params, i + TAG_CLOSE.len()));
        }
        if ws == 0 {
            return None;
        }
        let key_len = ident_len(&s[i..]);
        if key_len == 0 {
            return None;
        }
        let key = s[i..i + key_len].to_owned();
        i += key_len;
        if bytes.get(i) != Some(&b'=') || bytes.get(i + 1) != Some(&b'"') {
            return None;
        }
        i += 2;
        let mut value = String::new();
        let mut chars = s[i..].char_indices();
        let consumed = loop {
            match chars.next()? {
                (j, '"') => break j + 1,
                (_, '\\') => match chars.next()? {
                    (_, c @ ('"' | '\\')) => value.push(c),
                    _ => return None,
                },
                (_, c) => value.push(c),
            }
        };
        i += consumed;
        if params.insert(key, value).is_some() {
            return None;
        }
    }
}

fn ident_len(s: &str) -> usize {
    let mut len = 0;
    for (i, c) in s.char_indices() {
        let ok = if i == 0 {
            matches!(c, 'a'..='z' | '_')
        } else {
            matches!(c, 'a'..='z' | '0'..='9' | '_')
        };
        if !ok {
            break;
        }
        len = i + c.len_utf8();
    }
    len
}

/// Joins text pieces; whitespace touching a removed span collapses to a
/// single space, and the result is trimmed.
fn join_pieces(pieces: &[Piece<'_>]) -> String {
    let mut out = String::new();
    let mut at_cut = false;
    let mut cut_ws = false;
    for piece in pieces {
        match piece {
            Piece::Cut => {
                if !at_cut {
                    at_cut = true;
                    cut_ws = false;
                }
                let trimmed = out.trim_end().len();
                cut_ws |= trimmed != out.len();
                out.truncate(trimmed);
            }
            Piece::Text(text) if at_cut => {
                let t = text.trim_start();
                cut_ws |= t.len() != text.len();
                if t.is_empty() {
                    continue;
                }
                if cut_ws && !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(t);
                at_cut = false;
            }
            Piece::Text(text) => out.push_str(text),
        }
    }
    out.trim().to_owned()
}

/// Collapses every whitespace run to one space and trims.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("output is not canonical: {0}")]
    NonCanonical(String),
}

/// Canonical serialization: plan block, visible text, then tags, separated by
/// single spaces.
pub fn render_tags(parsed: &ParsedOutput) -> Result<String, RenderError> {
    if !parsed.unknown_spans.is_empty() {
        return Err(RenderError::NonCanonical(format!(
            "{} unknown span(s)",
            parsed.unknown_spans.len()
        )));
    }
    let visible = &parsed.visible_text;
    if [TAG_OPEN, PLAN_OPEN, PLAN_CLOSE].iter().any(|d| visible.contains(d)) {
        return Err(RenderError::NonCanonical(
            "visible text contains control syntax".into(),
        ));
    }
    let mut segments = Vec::new();
    if let Some(plan) = &parsed.plan {
        if plan.contains(PLAN_CLOSE) {
            return Err(RenderError::NonCanonical("plan contains a closing delimiter".into()));
        }
        segments.push(format!("{PLAN_OPEN}{plan}{PLAN_CLOSE}"));
    }
    let visible = visible.trim();
    if !visible.is_empty() {
        segments.push(visible.to_owned());
    }
    segments.extend(parsed.tags.iter().map(ComponentTag::render));
    Ok(segments.join(" "))
}

/// UI-facing instruction derived from parsed model output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Directive {
    DisplayText {
        text: String,
    },
    ShowCanvas {
        kind: String,
    },
    #[serde(rename_all = "camelCase")]
    ShowHint {
        hint_id: String,
        parts: Vec<MessagePart>,
    },
    ShowRating {
        score: u8,
    },
    EndSession {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        outcome: Option<Outcome>,
    },
}

/// Resolves hint ids referenced by hint tags into displayable parts.
pub trait HintSource {
    fn resolve_hint(&self, id: &str) -> Option<Vec<MessagePart>>;
}

impl HintSource for [crate::puzzle::HintMessage] {
    fn resolve_hint(&self, id: &str) -> Option<Vec<MessagePart>> {
        self.iter().find(|h| h.hint_id == id).map(|h| h.parts.clone())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DirectiveError {
    #[error("hint {0:?} is not among the prepared hints")]
    UnknownHintId(String),
}

/// Maps parsed output onto UI directives. Visible text comes first; progress
/// tags produce nothing.
pub fn to_ui_directives(
    parsed: &ParsedOutput,
    hints: &(impl HintSource + ?Sized),
) -> Result<Vec<Directive>, DirectiveError> {
    let mut out = Vec::with_capacity(parsed.tags.len() + 1);
    if !parsed.visible_text.is_empty() {
        out.push(Directive::DisplayText {
            text: parsed.visible_text.clone(),
        });
    }
    for tag in &parsed.tags {
        let directive = match tag.name {
            ComponentName::Draw => Directive::ShowCanvas {
                kind: tag.params["kind"].clone(),
            },
            ComponentName::End => Directive::EndSession { outcome: None },
            ComponentName::Rating => Directive::ShowRating {
                score: tag.score().expect("validated at construction"),
            },
            ComponentName::Hint => {
                let id = &tag.params["id"];
                let parts = hints
                    .resolve_hint(id)
                    .ok_or_else(|| DirectiveError::UnknownHintId(id.clone()))?;
                Directive::ShowHint {
                    hint_id: id.clone(),
                    parts,
                }
            }
            ComponentName::Progress => continue,
        };
        out.push(directive);
    }
    Ok(out)
}
