//! Session state, its event log and on-disk persistence.

use crate::chain::{NodeId, NodeKind, NodeStatus, ParseDiagnostic, Provenance, ReasoningNode, ReasoningTree};
use crate::operators::{AnswerUnit, FlaggedQuestionRegistry, LinkMap, SegmentationResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::VecDeque;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Called with every event as it is appended. Not persisted.
#[derive(Clone, Default)]
pub struct Observer(Option<Arc<dyn Fn(&SessionEvent) + Send + Sync>>);

impl Observer {
    pub fn new(f: impl Fn(&SessionEvent) + Send + Sync + 'static) -> Self {
        Observer(Some(Arc::new(f)))
    }
}

impl fmt::Debug for Observer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.0.is_some() { "Observer(set)" } else { "Observer(none)" })
    }
}

impl PartialEq for Observer {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl SessionId {
    pub fn generate() -> Self {
        SessionId(uuid::Uuid::new_v4().to_string())
    }

    /// Ids name files on disk, so only `[A-Za-z0-9_-]` is accepted.
    pub fn parse(s: &str) -> Option<Self> {
        let ok = !s.is_empty()
            && s.len() <= 64
            && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        ok.then(|| SessionId(s.to_string()))
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Asking,
    Reasoning,
    Structuring,
    TreeReady,
    Answering,
    Answered,
}

impl Phase {
    pub fn allows_edits(self) -> bool {
        matches!(self, Phase::Structuring | Phase::TreeReady | Phase::Answered)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("phase serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PauseReason {
    User,
    Feedback,
}

/// A node as carried in events: everything but the children.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub id: NodeId,
    pub kind: NodeKind,
    pub text: String,
    pub status: NodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback_answer: Option<String>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_prompt: Option<String>,
}

impl From<&ReasoningNode> for NodeSnapshot {
    fn from(n: &ReasoningNode) -> Self {
        NodeSnapshot {
            id: n.id,
            kind: n.kind,
            text: n.text.clone(),
            status: n.status,
            feedback_answer: n.feedback_answer.clone(),
            provenance: n.provenance,
            user_prompt: n.user_prompt.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    NodeAdded {
        node: NodeSnapshot,
        parent: Option<NodeId>,
        index: usize,
    },
    NodeTextDelta {
        id: NodeId,
        delta: String,
    },
    NodeCompleted {
        id: NodeId,
        status: NodeStatus,
    },
    FeedbackRequired {
        id: NodeId,
        question: String,
    },
    NodeUpdated {
        node: NodeSnapshot,
    },
    NodeRemoved {
        id: NodeId,
        removed: Vec<NodeId>,
    },
    GenerationPaused {
        reason: PauseReason,
    },
    GenerationResumed {
        reason: PauseReason,
    },
    TreeComplete {
        node_count: usize,
    },
    AnswerDelta {
        delta: String,
    },
    AnswerComplete {
        answer: String,
        units: Vec<AnswerUnit>,
    },
    LinksReady {
        links: LinkMap,
    },
    LinksUnavailable {
        reason: String,
    },
    Error {
        code: String,
        message: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// A model-emitted node waiting to be revealed, with the parent it attaches to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingNode {
    pub parent: Option<NodeId>,
    pub node: ReasoningNode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub user_prompt: String,
    pub raw_think: String,
    /// Answer channel of the first reasoning call, kept for reference.
    #[serde(default)]
    pub initial_answer: String,
    pub segments: Option<SegmentationResult>,
    /// Tagged text per segment after clarification, in segment order.
    #[serde(default)]
    pub tagged_segments: Vec<String>,
    #[serde(default)]
    pub diagnostics: Vec<ParseDiagnostic>,
    /// The visible tree.
    pub tree: ReasoningTree,
    /// Structured nodes not yet revealed, in preorder.
    pub pending: VecDeque<PendingNode>,
    pub registry: FlaggedQuestionRegistry,
    pub phase: Phase,
    pub paused: bool,
    /// The feedback node generation is halted at.
    pub halted_at: Option<NodeId>,
    pub answer: Option<String>,
    pub answer_units: Vec<AnswerUnit>,
    pub links: Option<LinkMap>,
    pub next_id: NodeId,
    pub event_log: Vec<SessionEvent>,
    /// Unix seconds of the last command.
    #[serde(default)]
    pub updated_at: u64,
    #[serde(skip)]
    pub observer: Observer,
}

pub(crate) fn now_secs() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl Session {
    pub fn new(id: SessionId, user_prompt: String) -> Self {
        Session {
            id,
            user_prompt,
            raw_think: String::new(),
            initial_answer: String::new(),
            segments: None,
            tagged_segments: Vec::new(),
            diagnostics: Vec::new(),
            tree: ReasoningTree::default(),
            pending: VecDeque::new(),
            registry: FlaggedQuestionRegistry::default(),
            phase: Phase::Asking,
            paused: false,
            halted_at: None,
            answer: None,
            answer_units: Vec::new(),
            links: None,
            next_id: NodeId(1),
            event_log: Vec::new(),
            updated_at: now_secs(),
            observer: Observer::default(),
        }
    }

    pub fn push(&mut self, kind: EventKind) -> &SessionEvent {
        let seq = self.event_log.len() as u64;
        self.event_log.push(SessionEvent { seq, kind });
        let ev = self.event_log.last().expect("just pushed");
        if let Some(f) = &self.observer.0 {
            f(ev);
        }
        ev
    }

    pub fn events_from(&self, seq: u64) -> &[SessionEvent] {
        let start = (seq as usize).min(self.event_log.len());
        &self.event_log[start..]
    }

    pub fn alloc_id(&mut self) -> NodeId {
        let id = self.next_id;
        self.next_id = NodeId(id.0 + 1);
        id
    }

    /// Visible feedback nodes still waiting on the user.
    pub fn unresolved_feedback(&self) -> Vec<NodeId> {
        self.tree
            .preorder()
            .into_iter()
            .filter(|n| n.kind == NodeKind::Feedback && n.status == NodeStatus::AwaitingFeedback)
            .map(|n| n.id)
            .collect()
    }

    pub fn log_digest(&self) -> String {
        log_digest(&self.event_log)
    }

    /// The visible tree with every pending node attached, as it will look
    /// once emission finishes.
    pub fn staged_tree(&self) -> ReasoningTree {
        let mut tree = self.tree.clone();
        for p in &self.pending {
            match p.parent {
                None => tree.roots.push(p.node.clone()),
                Some(id) => {
                    if let Some(parent) = tree.find_mut(id) {
                        parent.children.push(p.node.clone());
                    }
                }
            }
        }
        tree
    }
}

/// SHA-256 over the log as JSON lines.
pub fn log_digest(events: &[SessionEvent]) -> String {
    let mut h = Sha256::new();
    for e in events {
        h.update(serde_json::to_vec(e).expect("event serializes"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("session store io: {0}")]
    Io(#[from] std::io::Error),
    #[error("session document: {0}")]
    Json(#[from] serde_json::Error),
}

/// One JSON document per session in a directory.
#[derive(Clone, Debug)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(SessionStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &SessionId) -> PathBuf {
        self.dir.join(format!("{}.json", id.0))
    }

    /// Writes to a temporary file and renames it over the old document.
    pub fn save(&self, session: &Session) -> Result<(), StoreError> {
        let tmp = self.dir.join(format!(".{}.json.tmp", session.id.0));
        let body = serde_json::to_vec_pretty(session)?;
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, self.path(&session.id))?;
        Ok(())
    }

    pub fn load(&self, id: &SessionId) -> Result<Option<Session>, StoreError> {
        match std::fs::read(self.path(id)) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}
