//! `{placeholder}` templates with strict rendering. `{{` and `}}` produce
//! literal braces.

use std::collections::{BTreeSet, HashMap};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

static RESIDUE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{[a-z_][a-z0-9_]*\}").expect("static regex"));

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unclosed placeholder at byte {0}")]
    Unclosed(usize),
    #[error("unmatched '}}' at byte {0}")]
    Unmatched(usize),
    #[error("invalid placeholder name {0:?}")]
    BadName(String),
    #[error("no binding for placeholder {{{0}}}")]
    MissingBinding(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Template {
    body: String,
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(body: impl Into<String>) -> Result<Self, TemplateError> {
        let body = body.into();
        let segments = tokenize(&body)?;
        Ok(Self { body, segments })
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(name) => Some(name.as_str()),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    /// Substitutes every placeholder; a placeholder without a binding is an
    /// error. Bound values are inserted verbatim and never re-scanned.
    pub fn render(&self, bindings: &HashMap<String, String>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len());
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Slot(name) => match bindings.get(name) {
                    Some(value) => out.push_str(value),
                    None => return Err(TemplateError::MissingBinding(name.clone())),
                },
            }
        }
        Ok(out)
    }
}

impl TryFrom<String> for Template {
    type Error = TemplateError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Template::parse(value)
    }
}

impl From<Template> for String {
    fn from(t: Template) -> Self {
        t.body
    }
}

pub fn render_template(
    template: &Template,
    bindings: &HashMap<String, String>,
) -> Result<String, TemplateError> {
    template.render(bindings)
}

/// True if `text` still contains something shaped like `{placeholder}`.
pub fn has_placeholder_residue(text: &str) -> bool {
    RESIDUE.is_match(text)
}

/// First `{placeholder}`-shaped substring of `text`, if any.
pub fn placeholder_residue(text: &str) -> Option<&str> {
    RESIDUE.find(text).map(|m| m.as_str())
}

fn tokenize(body: &str) -> Result<Vec<Segment>, TemplateError> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut chars = body.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            '{' if matches!(chars.peek(), Some((_, '{'))) => {
                chars.next();
                literal.push('{');
            }
            '}' if matches!(chars.peek(), Some((_, '}'))) => {
                chars.next();
                literal.push('}');
            }
            '}' => return Err(TemplateError::Unmatched(i)),
            '{' => {
                let rest = &body[i + 1..];
                let close = rest.find('}').ok_or(TemplateError::Unclosed(i))?;
                let name = &rest[..close];
                if name.contains('{') {
                    return Err(TemplateError::Unclosed(i));
                }
                if !is_slot_name(name) {
                    return Err(TemplateError::BadName(name.to_owned()));
                }
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Slot(name.to_owned()));
                for _ in 0..=name.len() {
                    chars.next();
                }
            }
            c => literal.push(c),
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

fn is_slot_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some('a'..='z' | '_'))
        && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_'))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bind(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn substitutes() {
        let t = Template::parse("What did you eat at {meal}?").unwrap();
        assert_eq!(t.render(&bind(&[("meal", "lunch")])).unwrap(), "What did you eat at lunch?");
    }

    #[test]
    fn repeated_slot() {
        let t = Template::parse("{a}{a}").unwrap();
        assert_eq!(t.render(&bind(&[("a", "x"), ("unused", "y")])).unwrap(), "xx");
        assert_eq!(t.placeholders().into_iter().collect::<Vec<_>>(), vec!["a"]);
    }

    #[test]
    fn missing_binding_names_slot() {
        let t = Template::parse("{a}").unwrap();
        assert_eq!(t.render(&HashMap::new()), Err(TemplateError::MissingBinding("a".into())));
    }

    #[test]
    fn syntax_errors() {
        assert_eq!(Template::parse("{unclosed"), Err(TemplateError::Unclosed(0)));
        assert_eq!(Template::parse("x } y"), Err(TemplateError::Unmatched(2)));
        assert!(matches!(Template::parse("{Bad}"), Err(TemplateError::BadName(_))));
        assert!(matches!(Template::parse("{}"), Err(TemplateError::BadName(_))));
        assert!(matches!(Template::parse("{a{b}"), Err(TemplateError::Unclosed(0))));
    }

    #[test]
    fn escaped_braces() {
        let t = Template::parse("json {{\"k\": {v}}}").unwrap();
        assert_eq!(t.render(&bind(&[("v", "1")])).unwrap(), "json {\"k\": 1}");
    }

    #[test]
    fn values_not_rescanned() {
        let t = Template::parse("{a}").unwrap();
        assert_eq!(t.render(&bind(&[("a", "{b}")])).unwrap(), "{b}");
    }

    #[test]
    fn residue_detection() {
        assert!(has_placeholder_residue("hi {name}"));
        assert!(!has_placeholder_residue("json {\"k\": 1}"));
    }

    proptest! {
        #[test]
        fn rendered_output_has_no_residue(
            parts in prop::collection::vec(("[a-z ,.]{0,6}", "[a-z_][a-z0-9_]{0,5}"), 0..6),
            value in "[a-zA-Z ]{0,6}",
        ) {
            let body: String = parts.iter().map(|(lit, slot)| format!("{lit}{{{slot}}}")).collect();
            let t = Template::parse(body).unwrap();
            let bindings: HashMap<String, String> =
                t.placeholders().into_iter().map(|p| (p.to_owned(), value.clone())).collect();
            let out = t.render(&bindings).unwrap();
            prop_assert!(!has_placeholder_residue(&out));
            for missing in t.placeholders() {
                let mut partial = bindings.clone();
                partial.remove(missing);
                prop_assert_eq!(t.render(&partial), Err(TemplateError::MissingBinding(missing.to_owned())));
            }
        }
    }
}
