use super::{
    Channel, EmbeddingProvider, OperatorProvider, ProviderError, ReasonChunk, ReasonStream,
    ReasonStreamEvent, ReasoningProvider, RoleConfig, ThinkSplitter, TokenUsage,
};
use async_trait::async_trait;
use bytes::Bytes;
use futures::stream::{BoxStream, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use std::collections::VecDeque;
use std::time::Duration;

fn map_reqwest(e: reqwest::Error) -> ProviderError {
    if e.is_timeout() {
        ProviderError::Timeout
    } else {
        ProviderError::Transport(e.to_string())
    }
}

async fn check_status(resp: reqwest::Response) -> Result<reqwest::Response, ProviderError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let body = resp.text().await.unwrap_or_default();
    let body: String = body.chars().take(500).collect();
    if status.as_u16() == 401 || status.as_u16() == 403 {
        Err(ProviderError::Auth(format!("HTTP {}: {body}", status.as_u16())))
    } else {
        Err(ProviderError::Status {
            status: status.as_u16(),
            body,
        })
    }
}

fn url(endpoint: &str, path: &str) -> String {
    format!("{}/{path}", endpoint.trim_end_matches('/'))
}

/// Splits a server-sent-event byte stream into `data:` payloads.
#[derive(Debug, Default)]
pub(crate) struct SseBuffer {
    buf: Vec<u8>,
}

impl SseBuffer {
    pub(crate) fn push(&mut self, bytes: &[u8]) -> Vec<String> {
        self.buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        while let Some(nl) = self.buf.iter().position(|b| *b == b'\n') {
            let line: Vec<u8> = self.buf.drain(..=nl).collect();
            let line = String::from_utf8_lossy(&line);
            let line = line.trim_end_matches(['\n', '\r']);
            if let Some(data) = line.strip_prefix("data:") {
                out.push(data.strip_prefix(' ').unwrap_or(data).to_string());
            }
        }
        out
    }
}

/// Chat-completions client for the reasoning and operator roles.
#[derive(Clone, Debug)]
pub struct ChatClient {
    http: reqwest::Client,
    cfg: RoleConfig,
}

impl ChatClient {
    pub fn new(cfg: RoleConfig) -> Result<Self, ProviderError> {
        let http = reqwest::Client::builder()
            .connect_timeout(cfg.timeout())
            .build()
            .map_err(map_reqwest)?;
        Ok(ChatClient { http, cfg })
    }

    fn request(&self, prompt: &str, stream: bool) -> reqwest::RequestBuilder {
        let mut body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "stream": stream,
        });
        if stream {
            body["stream_options"] = json!({"include_usage": true});
        }
        let mut req = self
            .http
            .post(url(&self.cfg.endpoint, "chat/completions"))
            .json(&body);
        if let Some(key) = self.cfg.api_key() {
            req = req.bearer_auth(key);
        }
        req
    }
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

struct StreamState {
    body: BoxStream<'static, Result<Bytes, reqwest::Error>>,
    sse: SseBuffer,
    splitter: ThinkSplitter,
    explicit_reasoning: bool,
    usage: Option<TokenUsage>,
    queue: VecDeque<Result<ReasonChunk, ProviderError>>,
    finished: bool,
    chunk_timeout: Duration,
}

impl StreamState {
    fn handle_payload(&mut self, payload: &str) {
        if payload.trim() == "[DONE]" {
            self.finish();
            return;
        }
        let v: Value = match serde_json::from_str(payload) {
            Ok(v) => v,
            Err(e) => {
                self.queue
                    .push_back(Err(ProviderError::Malformed(format!("stream chunk: {e}"))));
                self.finished = true;
                return;
            }
        };
        if let Some(u) = v.get("usage").filter(|u| !u.is_null()) {
            if let Ok(u) = serde_json::from_value::<Usage>(u.clone()) {
                self.usage = Some(TokenUsage {
                    prompt_tokens: u.prompt_tokens.unwrap_or(0),
                    completion_tokens: u.completion_tokens.unwrap_or(0),
                });
            }
        }
        let Some(delta) = v.pointer("/choices/0/delta") else {
            return;
        };
        let reasoning = ["reasoning_content", "reasoning"]
            .iter()
            .find_map(|k| delta.get(*k).and_then(Value::as_str))
            .filter(|s| !s.is_empty());
        if let Some(r) = reasoning {
            self.explicit_reasoning = true;
            self.queue.push_back(Ok(ReasonChunk::Delta(ReasonStreamEvent {
                channel: Channel::Think,
                delta: r.to_string(),
            })));
        }
        if let Some(c) = delta.get("content").and_then(Value::as_str).filter(|s| !s.is_empty()) {
            if self.explicit_reasoning {
                self.queue.push_back(Ok(ReasonChunk::Delta(ReasonStreamEvent {
                    channel: Channel::Answer,
                    delta: c.to_string(),
                })));
            } else {
                for ev in self.splitter.push(c) {
                    self.queue.push_back(Ok(ReasonChunk::Delta(ev)));
                }
            }
        }
    }

    fn finish(&mut self) {
        if self.finished {
            return;
        }
        for ev in self.splitter.finish() {
            self.queue.push_back(Ok(ReasonChunk::Delta(ev)));
        }
        self.queue.push_back(Ok(ReasonChunk::Done(self.usage)));
        self.finished = true;
    }
}

#[async_trait]
impl ReasoningProvider for ChatClient {
    async fn reason(&self, prompt: &str) -> Result<ReasonStream, ProviderError> {
        let timeout = self.cfg.timeout();
        let resp = tokio::time::timeout(timeout, self.request(prompt, true).send())
            .await
            .map_err(|_| ProviderError::Timeout)?
            .map_err(map_reqwest)?;
        let resp = check_status(resp).await?;
        let state = StreamState {
            body: resp.bytes_stream().boxed(),
            sse: SseBuffer::default(),
            splitter: ThinkSplitter::new(),
            explicit_reasoning: false,
            usage: None,
            queue: VecDeque::new(),
            finished: false,
            chunk_timeout: timeout,
        };
        Ok(futures::stream::unfold(state, |mut st| async move {
            loop {
                if let Some(item) = st.queue.pop_front() {
                    return Some((item, st));
                }
                if st.finished {
                    return None;
                }
                match tokio::time::timeout(st.chunk_timeout, st.body.next()).await {
                    Err(_) => {
                        st.finished = true;
                        st.queue.push_back(Err(ProviderError::Timeout));
                    }
                    Ok(None) => st.finish(),
                    Ok(Some(Err(e))) => {
                        st.finished = true;
                        st.queue.push_back(Err(map_reqwest(e)));
                    }
                    Ok(Some(Ok(bytes))) => {
                        for payload in st.sse.push(&bytes) {
                            st.handle_payload(&payload);
                            if st.finished {
                                break;
                            }
                        }
                    }
                }
            }
        })
        .boxed())
    }
}

#[async_trait]
impl OperatorProvider for ChatClient {
    async fn complete(&self, _template_id: &str, prompt: &str) -> Result<String, ProviderError> {
        let timeout = self.cfg.timeout();
        let fut = async {
            let resp = self.request(prompt, false).send().await.map_err(map_reqwest)?;
            let resp = check_status(resp).await?;
            resp.json::<Value>().await.map_err(map_reqwest)
        };
        let v = tokio::time::timeout(timeout, fut)
            .await
            .map_err(|_| ProviderError::Timeout)??;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Malformed("no choices[0].message.content".into()))
    }
}

/// Client for an OpenAI-compatible `/embeddings` endpoint.
#[derive(Clone, Debug)]
pub struct EmbeddingClient {
    http: reqwest::Client,
    cfg: RoleConfig,
}

impl EmbeddingClient {
    pub fn new(cfg: RoleConfig) -> Result<Self, ProviderError> {
        let http = reqwest::Client::builder()
            .timeout(cfg.timeout())
            .build()
            .map_err(map_reqwest)?;
        Ok(EmbeddingClient { http, cfg })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    #[serde(default)]
    index: usize,
    embedding: Vec<f32>,
}

#[async_trait]
impl EmbeddingProvider for EmbeddingClient {
    fn model_id(&self) -> &str {
        &self.cfg.model
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::Embedding("no input texts".into()));
        }
        let mut req = self
            .http
            .post(url(&self.cfg.endpoint, "embeddings"))
            .json(&json!({"model": self.cfg.model, "input": texts}));
        if let Some(key) = self.cfg.api_key() {
            req = req.bearer_auth(key);
        }
        let resp = check_status(req.send().await.map_err(map_reqwest)?).await?;
        let mut body: EmbeddingResponse = resp
            .json()
            .await
            .map_err(|e| ProviderError::Embedding(e.to_string()))?;
        body.data.sort_by_key(|r| r.index);
        if body.data.len() != texts.len() {
            return Err(ProviderError::Embedding(format!(
                "expected {} vectors, got {}",
                texts.len(),
                body.data.len()
            )));
        }
        let dim = body.data[0].embedding.len();
        let mut out = Vec::with_capacity(texts.len());
        for row in body.data {
            let norm: f32 = row.embedding.iter().map(|x| x * x).sum();
            if row.embedding.len() != dim || !norm.is_finite() || norm == 0.0 {
                return Err(ProviderError::Embedding("degenerate embedding vector".into()));
            }
            out.push(row.embedding);
        }
        Ok(out)
    }
}
