use serde::{Deserialize, Serialize};
use std::time::Duration;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleKind {
    #[default]
    Http,
    /// Served from a fixture file; no network access.
    Scripted,
}

/// Connection settings for one model role. The API key is never part of the
/// config itself, only the name of the environment variable holding it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleConfig {
    #[serde(default)]
    pub kind: RoleKind,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    1
}

impl RoleConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Reads the key from the configured environment variable. Missing or
    /// empty variables yield `None`; the endpoint then decides whether that
    /// is an auth failure.
    pub fn api_key(&self) -> Option<String> {
        std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    #[serde(default = "ProviderConfig::default_reasoning")]
    pub reasoning: RoleConfig,
    #[serde(default = "ProviderConfig::default_operator")]
    pub operator: RoleConfig,
    #[serde(default = "ProviderConfig::default_embedding")]
    pub embedding: RoleConfig,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            reasoning: Self::default_reasoning(),
            operator: Self::default_operator(),
            embedding: Self::default_embedding(),
        }
    }
}

impl ProviderConfig {
    fn default_reasoning() -> RoleConfig {
        RoleConfig {
            kind: RoleKind::Http,
            endpoint: "https://api.together.xyz/v1".into(),
            model: "deepseek-ai/DeepSeek-R1".into(),
            api_key_env: "REASONWEAVE_REASONING_KEY".into(),
            timeout_secs: 120.0,
            max_retries: 1,
        }
    }

    fn default_operator() -> RoleConfig {
        RoleConfig {
            kind: RoleKind::Http,
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o-2024-08-06".into(),
            api_key_env: "REASONWEAVE_OPERATOR_KEY".into(),
            timeout_secs: 60.0,
            max_retries: 1,
        }
    }

    fn default_embedding() -> RoleConfig {
        RoleConfig {
            kind: RoleKind::Http,
            endpoint: "https://api.together.xyz/v1".into(),
            model: "sentence-transformers/all-MiniLM-L6-v2".into(),
            api_key_env: "REASONWEAVE_EMBED_KEY".into(),
            timeout_secs: 30.0,
            max_retries: 1,
        }
    }

    /// Every role mapped to the scripted provider.
    pub fn scripted() -> Self {
        let mut c = Self::default();
        for r in [&mut c.reasoning, &mut c.operator, &mut c.embedding] {
            r.kind = RoleKind::Scripted;
        }
        c
    }

    /// Checks role invariants; the error names the offending key.
    pub fn validate(&self) -> Result<(), String> {
        for (name, r) in [
            ("reasoning", &self.reasoning),
            ("operator", &self.operator),
            ("embedding", &self.embedding),
        ] {
            if !(r.timeout_secs.is_finite() && r.timeout_secs > 0.0) {
                return Err(format!("providers.{name}.timeout_secs must be a positive number"));
            }
            if r.kind == RoleKind::Http {
                if r.endpoint.trim().is_empty() {
                    return Err(format!("providers.{name}.endpoint is empty"));
                }
                if r.model.trim().is_empty() {
                    return Err(format!("providers.{name}.model is empty"));
                }
                if r.api_key_env.trim().is_empty() {
                    return Err(format!("providers.{name}.api_key_env is empty"));
                }
            }
        }
        Ok(())
    }
}
