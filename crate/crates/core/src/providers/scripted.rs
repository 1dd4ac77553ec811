use super::{
    OperatorProvider, ProviderError, ReasonChunk, ReasonStream, ReasoningProvider, ThinkSplitter,
};
use crate::prompts::REASON;
use async_trait::async_trait;
use futures::stream::BoxStream;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::sync::Mutex;

/// Lowercase hex SHA-256 of a rendered prompt.
pub fn digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureMatch {
    pub template_id: String,
    pub input_digest: String,
}

/// One recorded model call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    #[serde(rename = "match")]
    pub matches: FixtureMatch,
    #[serde(default)]
    pub completion: String,
    /// Replays a provider failure instead of a completion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Streams only this many characters, then fails the transport.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_after: Option<usize>,
}

impl Fixture {
    pub fn new(template_id: &str, prompt: &str, completion: impl Into<String>) -> Self {
        Fixture {
            matches: FixtureMatch {
                template_id: template_id.to_string(),
                input_digest: digest(prompt),
            },
            completion: completion.into(),
            error: None,
            fail_after: None,
        }
    }

    pub fn failure(template_id: &str, prompt: &str, message: &str) -> Self {
        Fixture {
            error: Some(message.to_string()),
            ..Fixture::new(template_id, prompt, "")
        }
    }

    pub fn interrupted(template_id: &str, prompt: &str, completion: &str, after: usize) -> Self {
        Fixture {
            fail_after: Some(after),
            ..Fixture::new(template_id, prompt, completion)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum FixtureError {
    #[error("fixture drift for template `{template_id}`: next recorded digest {expected}, prompt digest {actual}")]
    DigestMismatch {
        template_id: String,
        expected: String,
        actual: String,
    },
    #[error("no recorded completion left for template `{template_id}`")]
    Exhausted { template_id: String },
}

impl FixtureError {
    pub fn template_id(&self) -> &str {
        match self {
            FixtureError::DigestMismatch { template_id, .. }
            | FixtureError::Exhausted { template_id } => template_id,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureLoadError {
    #[error("reading fixtures: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing fixtures: {0}")]
    Json(#[from] serde_json::Error),
}

/// Replays recorded completions for every model role.
///
/// Each call consumes the first unused fixture whose template id and prompt
/// digest both match, so concurrent calls for different prompts resolve the
/// same way regardless of completion order. A call whose template id has
/// unused fixtures but none with a matching digest is fixture drift.
#[derive(Debug)]
pub struct ScriptedProvider {
    entries: Mutex<Vec<(Fixture, bool)>>,
    chunk_chars: usize,
}

impl ScriptedProvider {
    pub fn new(fixtures: Vec<Fixture>) -> Self {
        ScriptedProvider {
            entries: Mutex::new(fixtures.into_iter().map(|f| (f, false)).collect()),
            chunk_chars: 16,
        }
    }

    pub fn load(path: &Path) -> Result<Self, FixtureLoadError> {
        let raw = std::fs::read_to_string(path)?;
        Ok(Self::new(serde_json::from_str(&raw)?))
    }

    /// Characters per streamed chunk.
    pub fn with_chunk_chars(mut self, n: usize) -> Self {
        self.chunk_chars = n.max(1);
        self
    }

    pub fn remaining(&self) -> usize {
        self.entries
            .lock()
            .expect("fixture lock")
            .iter()
            .filter(|(_, used)| !used)
            .count()
    }

    fn take(&self, template_id: &str, prompt: &str) -> Result<Fixture, FixtureError> {
        let actual = digest(prompt);
        let mut entries = self.entries.lock().expect("fixture lock");
        if let Some((f, used)) = entries.iter_mut().find(|(f, used)| {
            !*used && f.matches.template_id == template_id && f.matches.input_digest == actual
        }) {
            *used = true;
            return Ok(f.clone());
        }
        match entries
            .iter()
            .find(|(f, used)| !*used && f.matches.template_id == template_id)
        {
            Some((f, _)) => Err(FixtureError::DigestMismatch {
                template_id: template_id.to_string(),
                expected: f.matches.input_digest.clone(),
                actual,
            }),
            None => Err(FixtureError::Exhausted {
                template_id: template_id.to_string(),
            }),
        }
    }

    fn chunks(&self, text: &str, limit: Option<usize>) -> Vec<String> {
        let chars: Vec<char> = text.chars().collect();
        let end = limit.map_or(chars.len(), |n| n.min(chars.len()));
        chars[..end]
            .chunks(self.chunk_chars)
            .map(|c| c.iter().collect())
            .collect()
    }
}

#[async_trait]
impl OperatorProvider for ScriptedProvider {
    async fn complete(&self, template_id: &str, prompt: &str) -> Result<String, ProviderError> {
        let f = self.take(template_id, prompt)?;
        match f.error {
            Some(msg) => Err(ProviderError::Scripted(msg)),
            None => Ok(f.completion),
        }
    }

    async fn complete_stream(
        &self,
        template_id: &str,
        prompt: &str,
    ) -> Result<BoxStream<'static, Result<String, ProviderError>>, ProviderError> {
        let f = self.take(template_id, prompt)?;
        if let Some(msg) = f.error {
            return Err(ProviderError::Scripted(msg));
        }
        let mut items: Vec<Result<String, ProviderError>> =
            self.chunks(&f.completion, f.fail_after).into_iter().map(Ok).collect();
        if f.fail_after.is_some() {
            items.push(Err(ProviderError::Transport("scripted stream interrupted".into())));
        }
        Ok(Box::pin(futures::stream::iter(items)))
    }
}

#[async_trait]
impl ReasoningProvider for ScriptedProvider {
    async fn reason(&self, prompt: &str) -> Result<ReasonStream, ProviderError> {
        let f = self.take(REASON, prompt)?;
        if let Some(msg) = f.error {
            return Err(ProviderError::Scripted(msg));
        }
        let mut splitter = ThinkSplitter::new();
        let mut items = Vec::new();
        for chunk in self.chunks(&f.completion, f.fail_after) {
            items.extend(splitter.push(&chunk).into_iter().map(|e| Ok(ReasonChunk::Delta(e))));
        }
        if f.fail_after.is_some() {
            items.push(Err(ProviderError::Transport("scripted stream interrupted".into())));
        } else {
            items.extend(splitter.finish().into_iter().map(|e| Ok(ReasonChunk::Delta(e))));
            items.push(Ok(ReasonChunk::Done(None)));
        }
        Ok(Box::pin(futures::stream::iter(items)))
    }
}

/// Delegates to real providers and records every call as a fixture, so a
/// live run can be replayed offline.
pub struct RecordingProvider {
    reasoning: std::sync::Arc<dyn ReasoningProvider>,
    operator: std::sync::Arc<dyn OperatorProvider>,
    log: Mutex<Vec<Fixture>>,
}

impl RecordingProvider {
    pub fn new(
        reasoning: std::sync::Arc<dyn ReasoningProvider>,
        operator: std::sync::Arc<dyn OperatorProvider>,
    ) -> Self {
        RecordingProvider {
            reasoning,
            operator,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Fixtures recorded so far, in call-completion order.
    pub fn fixtures(&self) -> Vec<Fixture> {
        self.log.lock().expect("fixture lock").clone()
    }

    fn record(&self, template_id: &str, prompt: &str, res: &Result<String, ProviderError>) {
        let f = match res {
            Ok(c) => Fixture::new(template_id, prompt, c.clone()),
            Err(e) => Fixture::failure(template_id, prompt, &e.to_string()),
        };
        self.log.lock().expect("fixture lock").push(f);
    }
}

#[async_trait]
impl OperatorProvider for RecordingProvider {
    async fn complete(&self, template_id: &str, prompt: &str) -> Result<String, ProviderError> {
        let res = self.operator.complete(template_id, prompt).await;
        self.record(template_id, prompt, &res);
        res
    }
}

#[async_trait]
impl ReasoningProvider for RecordingProvider {
    /// Buffers the whole stream, records it as `<think>..</think>answer`,
    /// then replays it.
    async fn reason(&self, prompt: &str) -> Result<ReasonStream, ProviderError> {
        use futures::StreamExt;
        let collected: Result<(String, String, Vec<ReasonChunk>), ProviderError> = async {
            let mut stream = self.reasoning.reason(prompt).await?;
            let (mut think, mut answer, mut items) = (String::new(), String::new(), Vec::new());
            while let Some(item) = stream.next().await {
                let item = item?;
                if let ReasonChunk::Delta(d) = &item {
                    match d.channel {
                        super::Channel::Think => think.push_str(&d.delta),
                        super::Channel::Answer => answer.push_str(&d.delta),
                    }
                }
                items.push(item);
            }
            Ok((think, answer, items))
        }
        .await;
        match collected {
            Ok((think, answer, items)) => {
                let completion = if think.is_empty() {
                    answer
                } else {
                    format!("<think>{think}</think>{answer}")
                };
                self.record(REASON, prompt, &Ok(completion));
                Ok(Box::pin(futures::stream::iter(items.into_iter().map(Ok))))
            }
            Err(e) => {
                self.record(REASON, prompt, &Err(e.clone()));
                Err(e)
            }
        }
    }
}
