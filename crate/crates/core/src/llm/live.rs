//! Client for OpenAI-compatible chat-completion endpoints.

use std::env;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde_json::{json, Value};

use super::{ContentItem, ModelRequest, Provider, ProviderError, ProviderResponse, Usage};
use crate::media::MediaStore;
use crate::message::Role;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiveProviderConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Option<Duration>,
}

impl LiveProviderConfig {
    /// Reads `PROVIDER_URL`, `PROVIDER_KEY`, `MODEL_NAME` and the optional
    /// `PROVIDER_TIMEOUT` (seconds).
    pub fn from_env() -> Result<Self, ProviderError> {
        let var = |name: &str| env::var(name).map_err(|_| ProviderError::Config(format!("{name} is not set")));
        let timeout = match env::var("PROVIDER_TIMEOUT") {
            Ok(secs) => Some(Duration::from_secs(
                secs.parse()
                    .map_err(|_| ProviderError::Config(format!("PROVIDER_TIMEOUT {secs:?} is not a number")))?,
            )),
            Err(_) => None,
        };
        Ok(Self {
            base_url: var("PROVIDER_URL")?,
            api_key: var("PROVIDER_KEY")?,
            model: env::var("MODEL_NAME").unwrap_or_else(|_| "gpt-4o".into()),
            timeout,
        })
    }
}

pub struct LiveProvider {
    config: LiveProviderConfig,
    media: Option<MediaStore>,
}

impl LiveProvider {
    pub fn new(config: LiveProviderConfig) -> Self {
        Self { config, media: None }
    }

    /// Image references are inlined as data URLs read from `media`.
    pub fn with_media(mut self, media: MediaStore) -> Self {
        self.media = Some(media);
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    pub(crate) fn request_body(&self, request: &ModelRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_prompt})];
        for item in &request.history {
            let role = match item.role {
                Role::User => "user",
                Role::Assistant => "assistant",
                Role::System => "system",
            };
            let content: Vec<Value> = item
                .content
                .iter()
                .map(|c| match c {
                    ContentItem::Text { text } => json!({"type": "text", "text": text}),
                    ContentItem::Image { media_id, mime } => match self.media.as_ref().and_then(|m| m.get(media_id).ok()) {
                        Some(bytes) => json!({
                            "type": "image_url",
                            "image_url": {"url": format!(
                                "data:{mime};base64,{}",
                                base64::engine::general_purpose::STANDARD.encode(bytes)
                            )}
                        }),
                        None => json!({"type": "text", "text": format!("[image {media_id} unavailable]")}),
                    },
                })
                .collect();
            messages.push(json!({"role": role, "content": content}));
        }
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
        })
    }
}

fn parse_completion(body: &Value) -> Result<(String, Option<Usage>), ProviderError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))?;
    let usage = body.get("usage").and_then(|u| {
        Some(Usage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()? as u32,
            completion_tokens: u.get("completion_tokens")?.as_u64()? as u32,
        })
    });
    Ok((text.to_owned(), usage))
}

impl Provider for LiveProvider {
    fn name(&self) -> &str {
        "live"
    }

    fn complete(&self, request: &ModelRequest, timeout: Duration) -> Result<ProviderResponse, ProviderError> {
        let timeout = self.config.timeout.unwrap_or(timeout);
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let started = Instant::now();
        let mut resp = agent
            .post(&self.endpoint())
            .header("Authorization", &format!("Bearer {}", self.config.api_key))
            .send_json(self.request_body(request))
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => ProviderError::Timeout,
                other => ProviderError::Transport(other.to_string()),
            })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ProviderError::Status { status, body });
        }
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Malformed(e.to_string()))?;
        let (raw_text, usage) = parse_completion(&body)?;
        Ok(ProviderResponse {
            raw_text,
            usage,
            latency: started.elapsed(),
        })
    }
}
