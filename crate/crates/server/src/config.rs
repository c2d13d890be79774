use std::env;
use std::net::SocketAddr;
use std::path::PathBuf;

use thiserror::Error;

pub const DEFAULT_MEDIA_LIMIT: usize = 10 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{name}: {message}")]
    Invalid { name: &'static str, message: String },
}

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub listen_addr: SocketAddr,
    pub data_dir: PathBuf,
    /// Shared bearer token; `None` disables authentication.
    pub api_token: Option<String>,
    pub cors_origins: Vec<String>,
    pub media_limit: usize,
    /// Replaces the hint budget of every group when set.
    pub hint_budget: Option<u32>,
    /// Scripted provider file; when unset the live provider is configured
    /// from `PROVIDER_URL`, `PROVIDER_KEY` and `MODEL_NAME`.
    pub provider_script: Option<PathBuf>,
    /// Upper bound for long-poll waits.
    pub max_wait_secs: u64,
}

impl ApiConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            listen_addr: ([127, 0, 0, 1], 8080).into(),
            data_dir: data_dir.into(),
            api_token: None,
            cors_origins: Vec::new(),
            media_limit: DEFAULT_MEDIA_LIMIT,
            hint_budget: None,
            provider_script: None,
            max_wait_secs: 30,
        }
    }

    /// Reads `LISTEN_ADDR`, `DATA_DIR`, `API_TOKEN`, `CORS_ORIGINS`
    /// (comma-separated), `MEDIA_LIMIT_BYTES`, `HINT_BUDGET` and
    /// `PROVIDER_SCRIPT`.
    pub fn from_env() -> Result<Self, ConfigError> {
        let mut config = Self::new(env::var("DATA_DIR").unwrap_or_else(|_| "data".into()));
        if let Ok(addr) = env::var("LISTEN_ADDR") {
            config.listen_addr = parse("LISTEN_ADDR", &addr)?;
        }
        config.api_token = env::var("API_TOKEN").ok().filter(|t| !t.is_empty());
        if let Ok(origins) = env::var("CORS_ORIGINS") {
            config.cors_origins = origins
                .split(',')
                .map(str::trim)
                .filter(|o| !o.is_empty())
                .map(str::to_owned)
                .collect();
        }
        if let Ok(limit) = env::var("MEDIA_LIMIT_BYTES") {
            config.media_limit = parse("MEDIA_LIMIT_BYTES", &limit)?;
        }
        if let Ok(budget) = env::var("HINT_BUDGET") {
            let budget: u32 = parse("HINT_BUDGET", &budget)?;
            if budget == 0 {
                return Err(ConfigError::Invalid {
                    name: "HINT_BUDGET",
                    message: "must be positive".into(),
                });
            }
            config.hint_budget = Some(budget);
        }
        config.provider_script = env::var("PROVIDER_SCRIPT").ok().map(PathBuf::from);
        Ok(config)
    }
}

fn parse<T: std::str::FromStr>(name: &'static str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Invalid {
        name,
        message: format!("{value:?}: {e}"),
    })
}
