//! Provider-independent model requests and the completion providers behind
//! them.

mod live;
mod scripted;

use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

pub use live::{LiveProvider, LiveProviderConfig};
pub use scripted::{ScriptStep, ScriptedProvider};

use crate::media::MediaId;
use crate::message::{PartKind, Role, Transcript};
use crate::puzzle::PuzzleInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum ContentItem {
    Text { text: String },
    #[serde(rename_all = "camelCase")]
    Image { media_id: MediaId, mime: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub role: Role,
    pub content: Vec<ContentItem>,
}

impl HistoryItem {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            content: vec![ContentItem::Text { text: text.into() }],
        }
    }

    pub fn joined_text(&self) -> String {
        let parts: Vec<&str> = self
            .content
            .iter()
            .filter_map(|c| match c {
                ContentItem::Text { text } => Some(text.as_str()),
                ContentItem::Image { .. } => None,
            })
            .collect();
        parts.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GenerationParams {
    pub temperature: f32,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelRequest {
    pub system_prompt: String,
    pub history: Vec<HistoryItem>,
    pub params: GenerationParams,
    /// Conversion log (e.g. dropped audio parts). Not sent to providers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ModelRequest {
    pub fn last_user_text(&self) -> Option<String> {
        self.history
            .iter()
            .rev()
            .find(|h| h.role == Role::User)
            .map(HistoryItem::joined_text)
    }

    /// Appends a system-role correction after the history; used when a
    /// response is rejected by a puzzle guard.
    pub fn push_correction(&mut self, note: impl Into<String>) {
        self.history.push(HistoryItem::text(Role::System, note));
    }
}

/// Maps a transcript onto a provider request. The leading system message is
/// carried by `system_prompt`; every other message becomes one history item
/// in order. Audio parts are dropped and noted.
pub fn convert_transcript(instance: &PuzzleInstance, transcript: &Transcript) -> ModelRequest {
    let mut notes = Vec::new();
    let history = transcript
        .messages()
        .iter()
        .filter(|m| m.role != Role::System)
        .map(|m| {
            let content = m
                .parts
                .iter()
                .filter_map(|p| match p.kind {
                    PartKind::Text => Some(ContentItem::Text {
                        text: p.text.clone().unwrap_or_default(),
                    }),
                    PartKind::ImageRef => Some(ContentItem::Image {
                        media_id: p.media_id.clone()?,
                        mime: p.mime.clone().unwrap_or_default(),
                    }),
                    PartKind::AudioRef => {
                        notes.push(format!("turn {}: dropped audio part", m.turn_index));
                        None
                    }
                })
                .collect();
            HistoryItem { role: m.role, content }
        })
        .collect();
    ModelRequest {
        system_prompt: instance.system_prompt.clone(),
        history,
        params: GenerationParams::default(),
        notes,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderResponse {
    pub raw_text: String,
    pub usage: Option<Usage>,
    pub latency: Duration,
}

impl ProviderResponse {
    pub fn text(raw_text: impl Into<String>) -> Self {
        Self {
            raw_text: raw_text.into(),
            usage: None,
            latency: Duration::ZERO,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider transport failure: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("provider response malformed: {0}")]
    Malformed(String),
    #[error("scripted provider exhausted after {0} response(s)")]
    ScriptExhausted(usize),
    #[error("script step {step} expects user text matching {pattern:?}, got {got:?}")]
    ScriptMismatch { step: usize, pattern: String, got: String },
    #[error("provider configuration: {0}")]
    Config(String),
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Timeout | ProviderError::Transport(_) => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &ModelRequest, timeout: Duration) -> Result<ProviderResponse, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub timeout: Duration,
    pub retries: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            retries: 2,
            base_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// No backoff sleeps; for scripted and test providers.
    pub fn immediate() -> Self {
        Self {
            base_backoff: Duration::ZERO,
            ..Self::default()
        }
    }
}

/// Calls `provider`, retrying transient failures with exponential backoff.
pub fn complete(
    provider: &dyn Provider,
    request: &ModelRequest,
    policy: &RetryPolicy,
) -> Result<ProviderResponse, ProviderError> {
    let mut attempt = 0;
    loop {
        let started = Instant::now();
        match provider.complete(request, policy.timeout) {
            Ok(mut resp) => {
                if resp.latency.is_zero() {
                    resp.latency = started.elapsed();
                }
                debug!(provider = provider.name(), attempt, "completion ok");
                return Ok(resp);
            }
            Err(e) if e.is_transient() && attempt < policy.retries => {
                let backoff = policy.base_backoff * 2u32.pow(attempt);
                warn!(provider = provider.name(), attempt, error = %e, "transient provider failure; retrying");
                thread::sleep(backoff);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}
