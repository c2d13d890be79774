use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ModelRequest, Provider, ProviderError, ProviderResponse};

/// One scripted reply. `match` is a case-insensitive substring of the last
/// user text, or a regular expression when prefixed with `re:`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptStep {
    #[serde(rename = "match", default, skip_serializing_if = "Option::is_none")]
    pub matcher: Option<String>,
    pub response: String,
}

impl ScriptStep {
    pub fn reply(response: impl Into<String>) -> Self {
        Self {
            matcher: None,
            response: response.into(),
        }
    }

    pub fn when(matcher: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: Some(matcher.into()),
            response: response.into(),
        }
    }

    fn matches(&self, user_text: &str) -> Result<bool, ProviderError> {
        let Some(pattern) = &self.matcher else {
            return Ok(true);
        };
        match pattern.strip_prefix("re:") {
            Some(re) => Regex::new(re)
                .map(|r| r.is_match(user_text))
                .map_err(|e| ProviderError::Config(format!("bad script regex {re:?}: {e}"))),
            None => Ok(user_text.to_lowercase().contains(&pattern.to_lowercase())),
        }
    }
}

/// Deterministic provider replaying a fixed list of responses in order.
#[derive(Debug)]
pub struct ScriptedProvider {
    steps: Vec<ScriptStep>,
    cursor: Mutex<usize>,
}

impl ScriptedProvider {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        Self {
            steps,
            cursor: Mutex::new(0),
        }
    }

    pub fn replies<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(responses.into_iter().map(ScriptStep::reply).collect())
    }

    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        serde_json::from_str(text)
            .map(Self::new)
            .map_err(|e| ProviderError::Config(format!("script: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = fs::read_to_string(path).map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn consumed(&self) -> usize {
        *self.cursor.lock().expect("script cursor")
    }

    pub fn remaining(&self) -> usize {
        self.steps.len() - self.consumed()
    }
}

impl Provider for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &ModelRequest, _timeout: Duration) -> Result<ProviderResponse, ProviderError> {
        let mut cursor = self.cursor.lock().expect("script cursor");
        let step = self
            .steps
            .get(*cursor)
            .ok_or(ProviderError::ScriptExhausted(self.steps.len()))?;
        let user_text = request.last_user_text().unwrap_or_default();
        if !step.matches(&user_text)? {
            return Err(ProviderError::ScriptMismatch {
                step: *cursor,
                pattern: step.matcher.clone().unwrap_or_default(),
                got: user_text,
            });
        }
        *cursor += 1;
        Ok(ProviderResponse::text(step.response.clone()))
    }
}
