//! Puzzle groups, the registry, and the factory pipeline that turns a group
//! plus source data into a ready-to-run [`PuzzleInstance`].
//!
//! A factory (strategy) only gathers data: template bindings, prepared hints
//! and answer payload. Rendering and the post-render checks (no placeholder
//! residue, every hint referenced by the hint rules exists) happen here so
//! every strategy gets them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;
use uuid::Uuid;

use crate::builtin::{guessing_word::WordList, Slot};
use crate::lifelog::{LifeLogError, LifeLogStore};
use crate::message::MessagePart;
use crate::tags::{parse_model_output, ComponentName};
use crate::template::{placeholder_residue, Template, TemplateError};

pub const DEFAULT_HINT_BUDGET: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Random,
    External,
    Lifelog,
}

impl DataSource {
    fn default_strategy(self) -> &'static str {
        match self {
            DataSource::Random => STATIC_STRATEGY,
            DataSource::External => crate::builtin::guessing_word::STRATEGY,
            DataSource::Lifelog => crate::builtin::life_recall::STRATEGY,
        }
    }
}

/// Puzzle family, used by the session manager to pick guards and hint
/// behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PuzzleKind {
    Generic,
    LifeRecall,
    GuessingWord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HintMessage {
    pub hint_id: String,
    pub parts: Vec<MessagePart>,
}

impl HintMessage {
    pub fn new(hint_id: impl Into<String>, parts: Vec<MessagePart>) -> Self {
        Self {
            hint_id: hint_id.into(),
            parts,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PuzzleGroup {
    pub group_id: String,
    pub display_name: String,
    pub prompt_template: Template,
    pub instruction_template: Template,
    pub hint_rule_template: Option<Template>,
    pub data_source: DataSource,
    pub cognitive_domain: Option<String>,
    pub strategy: String,
    pub hint_budget: u32,
    /// Strategy-specific settings (category, window_hours, ...).
    pub settings: BTreeMap<String, String>,
}

impl PuzzleGroup {
    pub fn new(
        group_id: &str,
        display_name: &str,
        prompt: &str,
        instruction: &str,
        data_source: DataSource,
    ) -> Result<Self, PuzzleError> {
        Ok(Self {
            group_id: group_id.to_owned(),
            display_name: display_name.to_owned(),
            prompt_template: parse_field("prompt", prompt)?,
            instruction_template: parse_field("instruction", instruction)?,
            hint_rule_template: None,
            data_source,
            cognitive_domain: None,
            strategy: data_source.default_strategy().to_owned(),
            hint_budget: DEFAULT_HINT_BUDGET,
            settings: BTreeMap::new(),
        })
    }

    pub fn with_hint_rules(mut self, rules: &str) -> Result<Self, PuzzleError> {
        self.hint_rule_template = Some(parse_field("hints", rules)?);
        Ok(self)
    }

    pub fn with_setting(mut self, key: &str, value: impl ToString) -> Self {
        self.settings.insert(key.to_owned(), value.to_string());
        self
    }

    pub fn setting(&self, key: &str) -> Option<&str> {
        self.settings.get(key).map(String::as_str)
    }

    pub fn from_config(config: GroupConfig) -> Result<Self, PuzzleError> {
        let mut group = PuzzleGroup::new(
            &config.id,
            &config.name,
            &config.templates.prompt,
            &config.templates.instruction,
            config.data_source,
        )?;
        if let Some(hints) = &config.templates.hints {
            group = group.with_hint_rules(hints)?;
        }
        if let Some(strategy) = config.strategy {
            group.strategy = strategy;
        }
        group.cognitive_domain = config.domain;
        group.hint_budget = config.hint_budget.unwrap_or(DEFAULT_HINT_BUDGET);
        group.settings = config.settings;
        Ok(group)
    }

    pub fn summary(&self) -> GroupSummary {
        GroupSummary {
            group_id: self.group_id.clone(),
            display_name: self.display_name.clone(),
            data_source: self.data_source,
            cognitive_domain: self.cognitive_domain.clone(),
            hint_budget: self.hint_budget,
        }
    }
}

fn parse_field(field: &'static str, body: &str) -> Result<Template, PuzzleError> {
    Template::parse(body).map_err(|source| PuzzleError::InvalidTemplate { field, source })
}

/// Declarative group definition as written in a `.toml` config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub id: String,
    pub name: String,
    pub data_source: DataSource,
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub domain: Option<String>,
    #[serde(default)]
    pub hint_budget: Option<u32>,
    pub templates: TemplateConfig,
    #[serde(default)]
    pub settings: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateConfig {
    pub prompt: String,
    pub instruction: String,
    #[serde(default)]
    pub hints: Option<String>,
}

impl GroupConfig {
    pub fn from_toml(text: &str) -> Result<Self, PuzzleError> {
        toml::from_str(text).map_err(|e| PuzzleError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GroupSummary {
    pub group_id: String,
    pub display_name: String,
    pub data_source: DataSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cognitive_domain: Option<String>,
    pub hint_budget: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PuzzleInstance {
    pub instance_id: String,
    pub group_id: String,
    pub kind: PuzzleKind,
    pub system_prompt: String,
    pub user_instruction: String,
    pub prepared_hints: Vec<HintMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_payload: Option<serde_json::Map<String, serde_json::Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_spec: Option<BTreeSet<Slot>>,
    pub created_at: DateTime<Utc>,
}

impl PuzzleInstance {
    pub fn hint(&self, id: &str) -> Option<&HintMessage> {
        self.prepared_hints.iter().find(|h| h.hint_id == id)
    }

    pub fn payload_str(&self, key: &str) -> Option<&str> {
        self.answer_payload.as_ref()?.get(key)?.as_str()
    }
}

/// What a strategy produces; [`PuzzleRegistry::instantiate`] renders it.
#[derive(Debug, Clone)]
pub struct Blueprint {
    pub kind: PuzzleKind,
    pub bindings: HashMap<String, String>,
    pub prepared_hints: Vec<HintMessage>,
    pub answer_payload: Option<serde_json::Map<String, serde_json::Value>>,
    pub slot_spec: Option<BTreeSet<Slot>>,
}

impl Blueprint {
    pub fn new(kind: PuzzleKind) -> Self {
        Self {
            kind,
            bindings: HashMap::new(),
            prepared_hints: Vec::new(),
            answer_payload: None,
            slot_spec: None,
        }
    }

    pub fn bind(&mut self, key: &str, value: impl Into<String>) -> &mut Self {
        self.bindings.insert(key.to_owned(), value.into());
        self
    }
}

pub struct InstantiationContext<'a> {
    pub seed: u64,
    pub now: DateTime<Utc>,
    pub lifelog: Option<&'a LifeLogStore>,
    pub word_list: Option<&'a WordList>,
}

impl<'a> InstantiationContext<'a> {
    pub fn new(seed: u64, now: DateTime<Utc>) -> Self {
        Self {
            seed,
            now,
            lifelog: None,
            word_list: None,
        }
    }

    pub fn with_lifelog(mut self, lifelog: &'a LifeLogStore) -> Self {
        self.lifelog = Some(lifelog);
        self
    }

    pub fn with_word_list(mut self, words: &'a WordList) -> Self {
        self.word_list = Some(words);
        self
    }
}

pub trait PuzzleFactory: Send + Sync {
    fn build(&self, group: &PuzzleGroup, ctx: &InstantiationContext<'_>) -> Result<Blueprint, PuzzleError>;
}

#[derive(Debug, Error)]
pub enum PuzzleError {
    #[error("puzzle group {0:?} not found")]
    GroupNotFound(String),
    #[error("no source data available: {0}")]
    DataSourceEmpty(String),
    #[error("no binding for placeholder {{{0}}}")]
    MissingBinding(String),
    #[error("invalid {field} template: {source}")]
    InvalidTemplate {
        field: &'static str,
        source: TemplateError,
    },
    #[error("invalid source entry: {0}")]
    InvalidEntry(String),
    #[error("invalid group: {0}")]
    InvalidGroup(String),
    #[error("unknown puzzle strategy {0:?}")]
    UnknownStrategy(String),
    #[error("rendered text still contains placeholder syntax: {0:?}")]
    UnresolvedPlaceholder(String),
    #[error("hint rules reference missing hint {0:?}")]
    UnknownHintReference(String),
    #[error("duplicate prepared hint id {0:?}")]
    DuplicateHint(String),
    #[error("group config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<TemplateError> for PuzzleError {
    fn from(e: TemplateError) -> Self {
        match e {
            TemplateError::MissingBinding(name) => PuzzleError::MissingBinding(name),
            source => PuzzleError::InvalidTemplate {
                field: "rendered",
                source,
            },
        }
    }
}

impl From<LifeLogError> for PuzzleError {
    fn from(e: LifeLogError) -> Self {
        match e {
            LifeLogError::DataSourceEmpty => PuzzleError::DataSourceEmpty("no qualifying life-log entry".into()),
            other => PuzzleError::Config(other.to_string()),
        }
    }
}

pub const STATIC_STRATEGY: &str = "static";

/// Generic strategy for `random` groups: every setting becomes a binding;
/// a setting `choose_<slot> = "a|b|c"` binds `<slot>` to a seeded choice.
pub struct StaticFactory;

impl PuzzleFactory for StaticFactory {
    fn build(&self, group: &PuzzleGroup, ctx: &InstantiationContext<'_>) -> Result<Blueprint, PuzzleError> {
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let mut bp = Blueprint::new(PuzzleKind::Generic);
        for (key, value) in &group.settings {
            match key.strip_prefix("choose_") {
                Some(slot) => {
                    let options: Vec<&str> = value.split('|').map(str::trim).filter(|s| !s.is_empty()).collect();
                    if options.is_empty() {
                        return Err(PuzzleError::DataSourceEmpty(format!("no options for {slot}")));
                    }
                    bp.bind(slot, options[rng.gen_range(0..options.len())]);
                }
                None => {
                    bp.bind(key, value.clone());
                }
            }
        }
        Ok(bp)
    }
}

pub struct PuzzleRegistry {
    groups: BTreeMap<String, PuzzleGroup>,
    factories: HashMap<String, Arc<dyn PuzzleFactory>>,
}

impl fmt::Debug for PuzzleRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PuzzleRegistry")
            .field("groups", &self.groups.keys().collect::<Vec<_>>())
            .field("factories", &self.factories.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Default for PuzzleRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl PuzzleRegistry {
    /// Registry with the built-in strategies but no groups.
    pub fn new() -> Self {
        let mut registry = Self {
            groups: BTreeMap::new(),
            factories: HashMap::new(),
        };
        registry.register_factory(STATIC_STRATEGY, Arc::new(StaticFactory));
        registry.register_factory(
            crate::builtin::life_recall::STRATEGY,
            Arc::new(crate::builtin::life_recall::LifeRecallFactory),
        );
        registry.register_factory(
            crate::builtin::guessing_word::STRATEGY,
            Arc::new(crate::builtin::guessing_word::GuessingWordFactory),
        );
        registry
    }

    /// Registry with the built-in strategies and the shipped groups.
    pub fn with_builtin_groups() -> Self {
        let mut registry = Self::new();
        for group in crate::builtin::builtin_groups() {
            registry
                .register_group(group)
                .expect("shipped groups are valid");
        }
        registry
    }

    pub fn register_factory(&mut self, name: &str, factory: Arc<dyn PuzzleFactory>) {
        self.factories.insert(name.to_owned(), factory);
    }

    /// Adds `group`, replacing (with a warning) any group with the same id.
    /// Returns the replaced definition.
    pub fn register_group(&mut self, group: PuzzleGroup) -> Result<Option<PuzzleGroup>, PuzzleError> {
        if !is_slug(&group.group_id) {
            return Err(PuzzleError::InvalidGroup(format!("group id {:?} is not a slug", group.group_id)));
        }
        if group.hint_budget == 0 {
            return Err(PuzzleError::InvalidGroup("hint budget must be positive".into()));
        }
        if !self.factories.contains_key(&group.strategy) {
            return Err(PuzzleError::UnknownStrategy(group.strategy.clone()));
        }
        let previous = self.groups.insert(group.group_id.clone(), group);
        if let Some(prev) = &previous {
            debug!(group = %prev.group_id, "puzzle group re-registered; previous definition replaced");
        }
        Ok(previous)
    }

    pub fn register_config_str(&mut self, toml_text: &str) -> Result<Option<PuzzleGroup>, PuzzleError> {
        let group = PuzzleGroup::from_config(GroupConfig::from_toml(toml_text)?)?;
        self.register_group(group)
    }

    /// Registers every `*.toml` group document in `dir`; returns how many.
    pub fn load_dir(&mut self, dir: &Path) -> Result<usize, PuzzleError> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("toml"))
            .collect();
        paths.sort();
        for path in &paths {
            let text = fs::read_to_string(path)?;
            self.register_config_str(&text)
                .map_err(|e| PuzzleError::Config(format!("{}: {e}", path.display())))?;
        }
        Ok(paths.len())
    }

    pub fn get(&self, group_id: &str) -> Option<&PuzzleGroup> {
        self.groups.get(group_id)
    }

    pub fn list_groups(&self) -> Vec<GroupSummary> {
        self.groups.values().map(PuzzleGroup::summary).collect()
    }

    pub fn instantiate(&self, group_id: &str, ctx: &InstantiationContext<'_>) -> Result<PuzzleInstance, PuzzleError> {
        let group = self
            .groups
            .get(group_id)
            .ok_or_else(|| PuzzleError::GroupNotFound(group_id.to_owned()))?;
        let factory = self
            .factories
            .get(&group.strategy)
            .ok_or_else(|| PuzzleError::UnknownStrategy(group.strategy.clone()))?;
        let blueprint = factory.build(group, ctx)?;
        assemble(group, blueprint, ctx.now)
    }
}

fn is_slug(s: &str) -> bool {
    !s.is_empty()
        && s.bytes().all(|b| matches!(b, b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_'))
        && !s.starts_with('-')
}

/// Renders a blueprint against its group's templates and checks the
/// instance invariants.
pub fn assemble(group: &PuzzleGroup, mut bp: Blueprint, now: DateTime<Utc>) -> Result<PuzzleInstance, PuzzleError> {
    bp.bindings
        .entry("display_name".into())
        .or_insert_with(|| group.display_name.clone());

    let mut ids = BTreeSet::new();
    for hint in &bp.prepared_hints {
        if !ids.insert(hint.hint_id.as_str()) {
            return Err(PuzzleError::DuplicateHint(hint.hint_id.clone()));
        }
        if hint.parts.is_empty() {
            return Err(PuzzleError::InvalidGroup(format!("hint {:?} has no parts", hint.hint_id)));
        }
    }

    let mut system_prompt = group.prompt_template.render(&bp.bindings)?;
    if let Some(rules) = &group.hint_rule_template {
        let rules = rules.render(&bp.bindings)?;
        for tag in parse_model_output(&rules).tags_named(ComponentName::Hint) {
            let id = tag.param("id").unwrap_or_default();
            if !ids.contains(id) {
                return Err(PuzzleError::UnknownHintReference(id.to_owned()));
            }
        }
        system_prompt.push_str("\n\n");
        system_prompt.push_str(&rules);
    }
    let user_instruction = group.instruction_template.render(&bp.bindings)?;

    for text in [&system_prompt, &user_instruction] {
        if let Some(m) = placeholder_residue(text) {
            return Err(PuzzleError::UnresolvedPlaceholder(m.to_owned()));
        }
    }

    Ok(PuzzleInstance {
        instance_id: Uuid::new_v4().to_string(),
        group_id: group.group_id.clone(),
        kind: bp.kind,
        system_prompt,
        user_instruction,
        prepared_hints: bp.prepared_hints,
        answer_payload: bp.answer_payload,
        slot_spec: bp.slot_spec,
        created_at: now,
    })
}

/// Removes brace characters from data-source text before it is bound into a
/// template, so user data can never look like an unresolved placeholder.
pub fn plain(text: &str) -> String {
    text.replace('{', "(").replace('}', ")")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::has_placeholder_residue;
    use chrono::TimeZone;

    fn now() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 9, 21, 9, 0, 0).unwrap()
    }

    fn static_group(id: &str) -> PuzzleGroup {
        PuzzleGroup::new(
            id,
            "Colours",
            "Talk about the colour {colour}.",
            "Name things that are {colour}.",
            DataSource::Random,
        )
        .unwrap()
        .with_setting("choose_colour", "red|green|blue")
    }

    #[test]
    fn register_and_list() {
        let mut r = PuzzleRegistry::with_builtin_groups();
        assert!(r.list_groups().iter().any(|g| g.group_id == "guessing-word"));
        assert!(r.list_groups().iter().any(|g| g.group_id == "life-recall"));
        r.register_group(static_group("colours")).unwrap();
        assert!(r.get("colours").is_some());
    }

    #[test]
    fn invalid_template_rejected() {
        let err = PuzzleGroup::new("x", "X", "{unclosed", "ok", DataSource::Random).unwrap_err();
        assert!(matches!(err, PuzzleError::InvalidTemplate { field: "prompt", .. }));
        let mut r = PuzzleRegistry::new();
        let err = r
            .register_config_str(
                "id = \"x\"\nname = \"X\"\ndata_source = \"random\"\n[templates]\nprompt = \"{unclosed\"\ninstruction = \"i\"\n",
            )
            .unwrap_err();
        assert!(matches!(err, PuzzleError::InvalidTemplate { .. }));
    }

    #[test]
    fn reregistration_replaces() {
        let mut r = PuzzleRegistry::new();
        assert!(r.register_group(static_group("colours")).unwrap().is_none());
        let mut second = static_group("colours");
        second.display_name = "Colours v2".into();
        let replaced = r.register_group(second).unwrap();
        assert_eq!(replaced.unwrap().display_name, "Colours");
        assert_eq!(r.get("colours").unwrap().display_name, "Colours v2");
        assert_eq!(r.list_groups().len(), 1);
    }

    #[test]
    fn unknown_strategy_and_bad_slug() {
        let mut r = PuzzleRegistry::new();
        let mut g = static_group("colours");
        g.strategy = "telepathy".into();
        assert!(matches!(r.register_group(g), Err(PuzzleError::UnknownStrategy(_))));
        assert!(matches!(r.register_group(static_group("Has Space")), Err(PuzzleError::InvalidGroup(_))));
    }

    #[test]
    fn group_not_found() {
        let r = PuzzleRegistry::new();
        let err = r.instantiate("nope", &InstantiationContext::new(1, now())).unwrap_err();
        assert!(matches!(err, PuzzleError::GroupNotFound(id) if id == "nope"));
    }

    #[test]
    fn static_strategy_is_seeded() {
        let mut r = PuzzleRegistry::new();
        r.register_group(static_group("colours")).unwrap();
        let a = r.instantiate("colours", &InstantiationContext::new(7, now())).unwrap();
        let b = r.instantiate("colours", &InstantiationContext::new(7, now())).unwrap();
        assert_ne!(a.instance_id, b.instance_id);
        assert_eq!(a.system_prompt, b.system_prompt);
        assert_eq!(a.user_instruction, b.user_instruction);
        assert!(!has_placeholder_residue(&a.system_prompt));
        let colours: BTreeSet<String> = (0..40)
            .map(|s| r.instantiate("colours", &InstantiationContext::new(s, now())).unwrap().system_prompt)
            .collect();
        assert_eq!(colours.len(), 3);
    }

    #[test]
    fn missing_binding_propagates() {
        let mut r = PuzzleRegistry::new();
        let g = PuzzleGroup::new("g", "G", "Hello {who}", "hi", DataSource::Random).unwrap();
        r.register_group(g).unwrap();
        let err = r.instantiate("g", &InstantiationContext::new(1, now())).unwrap_err();
        assert!(matches!(err, PuzzleError::MissingBinding(name) if name == "who"));
    }

    #[test]
    fn hint_rules_must_reference_prepared_hints() {
        let group = PuzzleGroup::new("g", "G", "p", "i", DataSource::Random)
            .unwrap()
            .with_hint_rules("Use [[hint id=\"h1\"]] when stuck.")
            .unwrap();
        let bp = Blueprint::new(PuzzleKind::Generic);
        assert!(matches!(assemble(&group, bp, now()), Err(PuzzleError::UnknownHintReference(id)) if id == "h1"));

        let mut bp = Blueprint::new(PuzzleKind::Generic);
        bp.prepared_hints.push(HintMessage::new("h1", vec![MessagePart::text("clue")]));
        let inst = assemble(&group, bp, now()).unwrap();
        assert!(inst.system_prompt.ends_with("Use [[hint id=\"h1\"]] when stuck."));
    }

    #[test]
    fn duplicate_hint_ids_rejected() {
        let group = PuzzleGroup::new("g", "G", "p", "i", DataSource::Random).unwrap();
        let mut bp = Blueprint::new(PuzzleKind::Generic);
        bp.prepared_hints.push(HintMessage::new("h1", vec![MessagePart::text("a")]));
        bp.prepared_hints.push(HintMessage::new("h1", vec![MessagePart::text("b")]));
        assert!(matches!(assemble(&group, bp, now()), Err(PuzzleError::DuplicateHint(_))));
    }

    #[test]
    fn config_round_trip() {
        let text = r#"
id = "colours"
name = "Colours"
data_source = "random"
domain = "language"
hint_budget = 5

[templates]
prompt = """
Discuss {colour}.
"""
instruction = "Name {colour} things."

[settings]
choose_colour = "red|blue"
"#;
        let group = PuzzleGroup::from_config(GroupConfig::from_toml(text).unwrap()).unwrap();
        assert_eq!(group.hint_budget, 5);
        assert_eq!(group.cognitive_domain.as_deref(), Some("language"));
        assert_eq!(group.strategy, STATIC_STRATEGY);
        assert!(GroupConfig::from_toml("id = 1").is_err());
    }

    #[test]
    fn plain_strips_braces() {
        assert_eq!(plain("a {b} c"), "a (b) c");
    }
}
