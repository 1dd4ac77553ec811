use reasonweave_core::engine::EngineConfig;
use reasonweave_core::providers::ProviderConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    /// A value that parsed but is out of range. The message starts with the
    /// offending key path.
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
    /// Origin allowed by CORS, usually the UI dev server.
    pub cors_origin: Option<String>,
    pub session_dir: PathBuf,
    /// Environment variable holding the bearer token for mutating routes.
    pub api_token_env: String,
    /// Run without a token when the variable is unset. Local use only.
    pub allow_anonymous: bool,
    pub idle_ttl_secs: u64,
    /// Delay between revealed nodes, so clients can watch the tree grow.
    pub step_delay_ms: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1".into(),
            port: 8080,
            cors_origin: Some("http://localhost:5173".into()),
            session_dir: PathBuf::from("sessions"),
            api_token_env: "REASONWEAVE_API_TOKEN".into(),
            allow_anonymous: false,
            idle_ttl_secs: 24 * 60 * 60,
            step_delay_ms: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub server: ServerConfig,
    pub providers: ProviderConfig,
    pub engine: EngineConfig,
    /// Fixture file backing any scripted provider role.
    pub fixtures: Option<PathBuf>,
    /// Directory of prompt templates overriding the bundled ones.
    pub prompts_dir: Option<PathBuf>,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: AppConfig = toml::from_str(&raw).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        // Relative paths are taken from the config file's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.fixtures, &mut cfg.prompts_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.server.session_dir.is_relative() {
            cfg.server.session_dir = base.join(&cfg.server.session_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.providers.validate().map_err(ConfigError::Invalid)?;
        let e = &self.engine;
        if let Err(m) = e.clarify.validate() {
            return bad(format!("engine.{m}"));
        }
        if e.group.max_segments == 0 {
            return bad("engine.group.max_segments must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&e.group.preservation_floor) {
            return bad("engine.group.preservation_floor must be within [0, 1]".into());
        }
        if e.summary.max_words == 0 {
            return bad("engine.summary.max_words must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&e.link.display_threshold) {
            return bad("engine.link.display_threshold must be within [0, 1]".into());
        }
        if self.server.api_token_env.trim().is_empty() {
            return bad("server.api_token_env is empty".into());
        }
        if self.server.idle_ttl_secs == 0 {
            return bad("server.idle_ttl_secs must be positive".into());
        }
        Ok(())
    }

    /// The bearer token, read from the configured environment variable.
    pub fn api_token(&self) -> Result<Option<String>, ConfigError> {
        match std::env::var(&self.server.api_token_env).ok().filter(|t| !t.is_empty()) {
            Some(t) => Ok(Some(t)),
            None if self.server.allow_anonymous => Ok(None),
            None => Err(ConfigError::Invalid(format!(
                "server.api_token_env: environment variable {} is not set",
                self.server.api_token_env
            ))),
        }
    }
}
