use crate::session::{HandleError, SessionHandle};
use reasonweave_core::engine::{Engine, EngineError};
use reasonweave_core::script::Command;
use reasonweave_core::session::{SessionId, StoreError};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    engine: Arc<Engine>,
    token: Option<String>,
    sessions: Mutex<HashMap<SessionId, SessionHandle>>,
    idle_ttl: Duration,
    step_delay: Duration,
    stopping: tokio::sync::watch::Sender<bool>,
}

#[derive(Debug, thiserror::Error)]
pub enum LookupError {
    #[error("unknown session {0}")]
    Unknown(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl AppState {
    /// `token` guards mutating routes; `None` leaves them open.
    pub fn new(engine: Engine, token: Option<String>) -> Self {
        AppState {
            inner: Arc::new(Inner {
                engine: Arc::new(engine),
                token,
                sessions: Mutex::new(HashMap::new()),
                idle_ttl: Duration::from_secs(24 * 60 * 60),
                step_delay: Duration::ZERO,
                stopping: tokio::sync::watch::channel(false).0,
            }),
        }
    }

    pub fn with_timing(self, idle_ttl: Duration, step_delay: Duration) -> Self {
        let inner = Arc::try_unwrap(self.inner).ok().expect("configure before sharing");
        AppState {
            inner: Arc::new(Inner { idle_ttl, step_delay, ..inner }),
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.inner.engine
    }

    /// Ends open event streams so graceful shutdown can finish.
    pub fn begin_shutdown(&self) {
        self.inner.stopping.send_replace(true);
    }

    pub fn stopping(&self) -> tokio::sync::watch::Receiver<bool> {
        self.inner.stopping.subscribe()
    }

    pub fn token(&self) -> Option<&str> {
        self.inner.token.as_deref()
    }

    /// Creates a session and starts reasoning in the background.
    pub async fn create(&self, prompt: &str) -> Result<SessionId, EngineError> {
        let s = self.inner.engine.create_session(prompt)?;
        let id = s.id.clone();
        let h = SessionHandle::spawn(self.inner.engine.clone(), s, self.inner.step_delay);
        self.inner.sessions.lock().expect("registry lock").insert(id.clone(), h.clone());
        match h.accept(Command::Start).await {
            Ok(()) => Ok(id),
            Err(HandleError::Engine(e)) => Err(e),
            Err(HandleError::Closed(_)) => unreachable!("actor was just spawned"),
        }
    }

    /// The live session, loading it from the store if it was evicted.
    pub fn get(&self, raw_id: &str) -> Result<SessionHandle, LookupError> {
        let id = SessionId::parse(raw_id).ok_or_else(|| LookupError::Unknown(raw_id.to_string()))?;
        if let Some(h) = self.inner.sessions.lock().expect("registry lock").get(&id) {
            h.shared.touch();
            return Ok(h.clone());
        }
        let store = self.inner.engine.store().ok_or_else(|| LookupError::Unknown(raw_id.to_string()))?;
        let session = store.load(&id)?.ok_or_else(|| LookupError::Unknown(raw_id.to_string()))?;
        let mut map = self.inner.sessions.lock().expect("registry lock");
        // Another request may have loaded it meanwhile.
        let h = map
            .entry(id)
            .or_insert_with(|| SessionHandle::spawn(self.inner.engine.clone(), session, self.inner.step_delay))
            .clone();
        Ok(h)
    }

    pub fn live_sessions(&self) -> usize {
        self.inner.sessions.lock().expect("registry lock").len()
    }

    /// Drops sessions idle longer than the TTL. Their actors persist and
    /// exit once queued work is done; the documents stay on disk.
    pub fn evict_idle(&self) -> Vec<SessionId> {
        let ttl = self.inner.idle_ttl;
        let mut map = self.inner.sessions.lock().expect("registry lock");
        let stale: Vec<SessionId> = map
            .iter()
            .filter(|(_, h)| h.shared.idle_for() >= ttl)
            .map(|(id, _)| id.clone())
            .collect();
        for id in &stale {
            map.remove(id);
            tracing::info!(session = %id, "evicted idle session");
        }
        stale
    }

    /// Periodically evicts idle sessions.
    pub fn spawn_sweeper(&self, every: Duration) -> tokio::task::JoinHandle<()> {
        let state = self.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            loop {
                tick.tick().await;
                state.evict_idle();
            }
        })
    }

    /// Persists every live session.
    pub async fn flush_all(&self) {
        let handles: Vec<SessionHandle> =
            self.inner.sessions.lock().expect("registry lock").values().cloned().collect();
        futures::future::join_all(handles.iter().map(|h| h.flush())).await;
    }
}
