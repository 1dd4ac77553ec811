//! Model roles (reasoning, operator, embedding) behind async traits, with HTTP
//! clients and deterministic scripted stand-ins.

mod config;
mod hash;
mod http;
mod scripted;
mod think;

pub use config::{ProviderConfig, RoleConfig, RoleKind};
pub use hash::HashEmbedder;
pub use http::{ChatClient, EmbeddingClient};
pub use scripted::{
    digest, Fixture, FixtureError, FixtureLoadError, FixtureMatch, RecordingProvider, ScriptedProvider,
};
pub use think::{split_think, ThinkSplitter};

use async_trait::async_trait;
use futures::stream::BoxStream;
use serde::{Deserialize, Serialize};
use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Think,
    Answer,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonStreamEvent {
    pub channel: Channel,
    pub delta: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReasonChunk {
    Delta(ReasonStreamEvent),
    Done(Option<TokenUsage>),
}

pub type ReasonStream = BoxStream<'static, Result<ReasonChunk, ProviderError>>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("embedding failure: {0}")]
    Embedding(String),
    #[error("scripted failure: {0}")]
    Scripted(String),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Timeout | ProviderError::Transport(_) | ProviderError::Scripted(_) => {
                true
            }
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    /// Fixture drift is a harness error and must never be absorbed by an
    /// operator fallback.
    pub fn is_fixture_drift(&self) -> bool {
        matches!(self, ProviderError::Fixture(_))
    }
}

/// Streams the reasoning model's think and answer channels for one prompt.
#[async_trait]
pub trait ReasoningProvider: Send + Sync {
    async fn reason(&self, prompt: &str) -> Result<ReasonStream, ProviderError>;
}

/// Runs one fully rendered operator prompt.
#[async_trait]
pub trait OperatorProvider: Send + Sync {
    async fn complete(&self, template_id: &str, prompt: &str) -> Result<String, ProviderError>;

    /// Streams the completion. The default yields it as a single chunk.
    async fn complete_stream(
        &self,
        template_id: &str,
        prompt: &str,
    ) -> Result<BoxStream<'static, Result<String, ProviderError>>, ProviderError> {
        let text = self.complete(template_id, prompt).await?;
        Ok(Box::pin(futures::stream::once(async move { Ok(text) })))
    }
}

#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    fn model_id(&self) -> &str;
    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;
}

/// The providers a session engine needs, one per role.
#[derive(Clone)]
pub struct ProviderSet {
    pub reasoning: Arc<dyn ReasoningProvider>,
    pub operator: Arc<dyn OperatorProvider>,
    pub embedding: Arc<dyn EmbeddingProvider>,
}

impl ProviderSet {
    /// All three roles served from one fixture script, with the hashed
    /// bag-of-tokens embedder.
    pub fn scripted(provider: ScriptedProvider) -> Self {
        let p = Arc::new(provider);
        ProviderSet {
            reasoning: p.clone(),
            operator: p,
            embedding: Arc::new(HashEmbedder::default()),
        }
    }

    /// Builds one provider per role. Scripted roles share `script`, which
    /// must be supplied when any reasoning or operator role is scripted; a
    /// scripted embedding role uses the hashed embedder.
    pub fn from_config(
        cfg: &ProviderConfig,
        script: Option<Arc<ScriptedProvider>>,
    ) -> Result<Self, ProviderError> {
        let need = |name: &str| {
            script.clone().ok_or_else(|| {
                ProviderError::Malformed(format!("providers.{name} is scripted but no fixture file was given"))
            })
        };
        let reasoning: Arc<dyn ReasoningProvider> = match cfg.reasoning.kind {
            RoleKind::Http => Arc::new(ChatClient::new(cfg.reasoning.clone())?),
            RoleKind::Scripted => need("reasoning")?,
        };
        let operator: Arc<dyn OperatorProvider> = match cfg.operator.kind {
            RoleKind::Http => Arc::new(ChatClient::new(cfg.operator.clone())?),
            RoleKind::Scripted => need("operator")?,
        };
        let embedding: Arc<dyn EmbeddingProvider> = match cfg.embedding.kind {
            RoleKind::Http => Arc::new(EmbeddingClient::new(cfg.embedding.clone())?),
            RoleKind::Scripted => Arc::new(HashEmbedder::default()),
        };
        Ok(ProviderSet { reasoning, operator, embedding })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each subsequent one.
    #[serde(with = "secs")]
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 1,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn immediate() -> Self {
        RetryPolicy {
            max_retries: 1,
            base_delay: Duration::ZERO,
        }
    }

    /// Runs `op`, retrying retryable failures with exponential backoff.
    pub async fn run<T, F, Fut>(&self, mut op: F) -> Result<T, ProviderError>
    where
        F: FnMut() -> Fut,
        Fut: Future<Output = Result<T, ProviderError>>,
    {
        let mut attempt = 0u32;
        loop {
            match op().await {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    let delay = self.base_delay * 2u32.saturating_pow(attempt);
                    tracing::warn!(error = %e, attempt, "provider call failed; retrying");
                    if !delay.is_zero() {
                        tokio::time::sleep(delay).await;
                    }
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        if !v.is_finite() || v < 0.0 {
            return Err(serde::de::Error::custom("delay must be a non-negative number of seconds"));
        }
        Ok(Duration::from_secs_f64(v))
    }
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}
