//! One actor task per live session. Every mutation goes through its command
//! queue; between commands it keeps revealing pending nodes.

use reasonweave_core::chain::ReasoningNode;
use reasonweave_core::engine::{Engine, EngineError, Step};
use reasonweave_core::script::{Command, Outcome};
use reasonweave_core::session::{EventKind, Observer, Phase, Session, SessionEvent, SessionId};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};
use tokio::sync::{broadcast, mpsc, oneshot};

/// State readable without going through the queue.
pub struct Shared {
    pub id: SessionId,
    /// The full event log, appended as events happen.
    log: Mutex<Vec<SessionEvent>>,
    /// Wakes stream readers; payloads are read from `log`.
    wake: broadcast::Sender<()>,
    /// Session as of the last completed command or step, without its log.
    view: RwLock<Session>,
    last_used: Mutex<Instant>,
}

impl Shared {
    pub fn touch(&self) {
        *self.last_used.lock().expect("clock lock") = Instant::now();
    }

    pub fn idle_for(&self) -> Duration {
        self.last_used.lock().expect("clock lock").elapsed()
    }

    /// The session document with its complete event log.
    pub fn document(&self) -> Session {
        let mut s = self.view.read().expect("view lock").clone();
        s.event_log = self.log.lock().expect("log lock").clone();
        s
    }

    pub fn view<T>(&self, f: impl FnOnce(&Session) -> T) -> T {
        f(&self.view.read().expect("view lock"))
    }

    /// Events from `seq` on, plus a receiver that fires on each new event.
    /// Subscribing under the log lock means no event falls between the two.
    pub fn subscribe(&self, seq: u64) -> (Vec<SessionEvent>, broadcast::Receiver<()>) {
        let log = self.log.lock().expect("log lock");
        let rx = self.wake.subscribe();
        let start = (seq as usize).min(log.len());
        (log[start..].to_vec(), rx)
    }

    pub fn events_from(&self, seq: u64) -> Vec<SessionEvent> {
        let log = self.log.lock().expect("log lock");
        let start = (seq as usize).min(log.len());
        log[start..].to_vec()
    }

    fn publish(&self, s: &Session) {
        let mut v = s.clone();
        v.event_log = Vec::new();
        *self.view.write().expect("view lock") = v;
    }
}

#[derive(Debug)]
pub enum Reply {
    Done,
    Node(ReasoningNode),
}

enum Job {
    /// Run the command and reply with its result.
    Run(Command, oneshot::Sender<Result<Reply, EngineError>>),
    /// Check preconditions, reply, then run the command.
    Accept(Command, oneshot::Sender<Result<Reply, EngineError>>),
    /// Persist now.
    Flush(oneshot::Sender<()>),
}

#[derive(Clone)]
pub struct SessionHandle {
    pub shared: Arc<Shared>,
    tx: mpsc::Sender<Job>,
}

#[derive(Debug, thiserror::Error)]
pub enum HandleError {
    #[error("session {0} has shut down")]
    Closed(SessionId),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl SessionHandle {
    pub fn spawn(engine: Arc<Engine>, mut session: Session, step_delay: Duration) -> Self {
        let (wake, _) = broadcast::channel(64);
        let shared = Arc::new(Shared {
            id: session.id.clone(),
            log: Mutex::new(session.event_log.clone()),
            wake,
            view: RwLock::new(Session::new(session.id.clone(), String::new())),
            last_used: Mutex::new(Instant::now()),
        });
        shared.publish(&session);
        let obs = shared.clone();
        session.observer = Observer::new(move |ev| {
            obs.log.lock().expect("log lock").push(ev.clone());
            let _ = obs.wake.send(());
        });
        let (tx, rx) = mpsc::channel(32);
        tokio::spawn(actor(engine, session, shared.clone(), rx, step_delay));
        SessionHandle { shared, tx }
    }

    async fn send(&self, make: impl FnOnce(oneshot::Sender<Result<Reply, EngineError>>) -> Job) -> Result<Reply, HandleError> {
        self.shared.touch();
        let (tx, rx) = oneshot::channel();
        let closed = || HandleError::Closed(self.shared.id.clone());
        self.tx.send(make(tx)).await.map_err(|_| closed())?;
        Ok(rx.await.map_err(|_| closed())??)
    }

    /// Runs `cmd` to completion.
    pub async fn run(&self, cmd: Command) -> Result<Reply, HandleError> {
        self.send(|tx| Job::Run(cmd, tx)).await
    }

    /// Returns once `cmd` passes its preconditions; the work continues in
    /// the background and reports through the event log.
    pub async fn accept(&self, cmd: Command) -> Result<(), HandleError> {
        self.send(|tx| Job::Accept(cmd, tx)).await.map(|_| ())
    }

    pub async fn flush(&self) {
        let (tx, rx) = oneshot::channel();
        if self.tx.send(Job::Flush(tx)).await.is_ok() {
            let _ = rx.await;
        }
    }
}

fn runnable(s: &Session) -> bool {
    s.phase == Phase::Structuring && !s.paused && s.halted_at.is_none()
}

fn reply_for(s: &Session, cmd: &Command, out: Outcome) -> Reply {
    let node = match (cmd, out) {
        (Command::BranchOut { .. }, Outcome::Node(id)) => s.tree.find(id),
        (Command::Collapse { id } | Command::Expand { id } | Command::SetText { id, .. }, _) => s.tree.find(*id),
        _ => None,
    };
    node.cloned().map_or(Reply::Done, Reply::Node)
}

fn save(engine: &Engine, s: &Session) {
    if let Some(store) = engine.store() {
        if let Err(e) = store.save(s) {
            tracing::warn!(session = %s.id, error = %e, "failed to persist session");
        }
    }
}

async fn execute(engine: &Engine, s: &mut Session, cmd: &Command) -> Result<Reply, EngineError> {
    let before = s.event_log.len();
    match engine.apply(s, cmd).await {
        Ok(out) => Ok(reply_for(s, cmd, out)),
        Err(e) => {
            // Background failures must reach clients through the log.
            let logged = s.event_log[before..]
                .iter()
                .any(|ev| matches!(ev.kind, EventKind::Error { .. }));
            if !logged {
                s.push(EventKind::Error {
                    code: e.code().to_string(),
                    message: e.to_string(),
                });
            }
            Err(e)
        }
    }
}

async fn actor(
    engine: Arc<Engine>,
    mut s: Session,
    shared: Arc<Shared>,
    mut rx: mpsc::Receiver<Job>,
    step_delay: Duration,
) {
    loop {
        let job = if runnable(&s) {
            match rx.try_recv() {
                Ok(job) => Some(job),
                Err(mpsc::error::TryRecvError::Empty) => None,
                Err(mpsc::error::TryRecvError::Disconnected) => break,
            }
        } else {
            match rx.recv().await {
                Some(job) => Some(job),
                None => break,
            }
        };
        match job {
            Some(Job::Run(cmd, reply)) => {
                let res = execute(&engine, &mut s, &cmd).await;
                shared.publish(&s);
                let _ = reply.send(res);
            }
            Some(Job::Accept(cmd, reply)) => {
                if let Err(e) = engine.check(&s, &cmd) {
                    let _ = reply.send(Err(e));
                    continue;
                }
                let _ = reply.send(Ok(Reply::Done));
                if let Err(e) = execute(&engine, &mut s, &cmd).await {
                    tracing::warn!(session = %s.id, command = cmd.name(), error = %e, "background command failed");
                }
                shared.publish(&s);
            }
            Some(Job::Flush(done)) => {
                save(&engine, &s);
                let _ = done.send(());
            }
            None => {
                match engine.step(&mut s).await {
                    Ok(Step::Emitted(_)) => {}
                    Ok(_) => save(&engine, &s),
                    Err(e) => {
                        // Pause so the loop does not spin; resuming retries.
                        tracing::warn!(session = %s.id, error = %e, "emission stopped");
                        s.push(EventKind::Error {
                            code: e.code().to_string(),
                            message: e.to_string(),
                        });
                        let _ = engine.pause(&mut s);
                    }
                }
                shared.publish(&s);
                if !step_delay.is_zero() {
                    tokio::time::sleep(step_delay).await;
                } else {
                    tokio::task::yield_now().await;
                }
            }
        }
    }
    save(&engine, &s);
    tracing::debug!(session = %s.id, "session actor stopped");
}
