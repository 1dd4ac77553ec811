//! The session state machine: ask, segment, structure, clarify, reveal the
//! tree node by node with halts at feedback questions, accept edits, then
//! regenerate and link the answer from the edited tree.

use crate::chain::{
    apply_edit, serialize_think, Edit, EditError, NodeId, NodeKind, NodeStatus, Provenance,
    ReasoningNode, ReasoningTree, SerializeOptions, TagParser, ThinkEnvelope,
};
use crate::operators::{
    clarify, group_thoughts, is_duplicate_question, link, segment_answer, structure_segment,
    summarize_subtree, ClarifyConfig, GroupConfig, LinkConfig, OperatorContext, OperatorError,
    SummaryConfig,
};
use crate::prompts::{PromptCatalog, PromptError, BRANCH, FOLLOW_UP, REGENERATE};
use crate::providers::{
    Channel, FixtureError, ProviderError, ProviderSet, ReasonChunk, RetryPolicy,
};
use crate::session::{
    now_secs, EventKind, NodeSnapshot, PauseReason, PendingNode, Phase, Session, SessionId,
    SessionStore,
};
use crate::text::{normalize_ws, strip_tags};
use futures::StreamExt;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("prompt must be non-empty")]
    EmptyPrompt,
    #[error("unknown node id {0}")]
    UnknownId(NodeId),
    #[error("invalid target {id}: {reason}")]
    InvalidTarget { id: NodeId, reason: String },
    #[error("{operation} is not allowed in phase {phase}")]
    InvalidPhase { operation: String, phase: Phase },
    #[error("node {0} is not awaiting feedback")]
    NotAwaitingFeedback(NodeId),
    #[error("feedback pending on nodes {0:?}")]
    FeedbackPending(Vec<NodeId>),
    #[error("provider failure: {0}")]
    Provider(ProviderError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl EngineError {
    /// Stable machine code, one per variant.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::EmptyPrompt => "EmptyPrompt",
            EngineError::UnknownId(_) => "UnknownId",
            EngineError::InvalidTarget { .. } => "InvalidTarget",
            EngineError::InvalidPhase { .. } => "InvalidPhase",
            EngineError::NotAwaitingFeedback(_) => "NotAwaitingFeedback",
            EngineError::FeedbackPending(_) => "FeedbackPending",
            EngineError::Provider(_) => "ProviderFailure",
            EngineError::Fixture(_) => "FixtureDrift",
            EngineError::Prompt(_) => "PromptError",
        }
    }

    pub fn ids(&self) -> Vec<NodeId> {
        match self {
            EngineError::UnknownId(id)
            | EngineError::NotAwaitingFeedback(id)
            | EngineError::InvalidTarget { id, .. } => vec![*id],
            EngineError::FeedbackPending(ids) => ids.clone(),
            _ => Vec::new(),
        }
    }
}

impl From<EditError> for EngineError {
    fn from(e: EditError) -> Self {
        match e {
            EditError::UnknownId(id) => EngineError::UnknownId(id),
            EditError::InvalidTarget { id, reason } => EngineError::InvalidTarget { id, reason },
        }
    }
}

impl From<OperatorError> for EngineError {
    fn from(e: OperatorError) -> Self {
        match e {
            OperatorError::Prompt(p) => EngineError::Prompt(p),
            OperatorError::Fixture(f) => EngineError::Fixture(f),
        }
    }
}

impl From<ProviderError> for EngineError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::Fixture(f) => EngineError::Fixture(f),
            other => EngineError::Provider(other),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub group: GroupConfig,
    pub clarify: ClarifyConfig,
    pub summary: SummaryConfig,
    pub link: LinkConfig,
    pub serialize: SerializeOptions,
    pub retry: RetryPolicy,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            group: GroupConfig::default(),
            clarify: ClarifyConfig::default(),
            summary: SummaryConfig::default(),
            link: LinkConfig::default(),
            serialize: SerializeOptions {
                include_summaries: false,
                include_feedback_answers: true,
            },
            retry: RetryPolicy::default(),
        }
    }
}

/// Result of trying to reveal the next node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Emitted(NodeId),
    /// Waiting on the user's answer to this feedback node.
    Halted(NodeId),
    Paused,
    /// The last pending node was revealed; the tree is ready.
    Complete,
    /// Nothing to do in the current phase.
    Idle,
}

pub struct Engine {
    providers: ProviderSet,
    ops: OperatorContext,
    cfg: EngineConfig,
    store: Option<SessionStore>,
}

fn clean(completion: &str) -> String {
    normalize_ws(&strip_tags(completion))
}

fn path_text(nodes: &[&ReasoningNode]) -> String {
    nodes
        .iter()
        .map(|n| n.text.trim())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Drops everything from `</answer>` on, holding back a possible partial
/// delimiter between chunks.
#[derive(Default)]
struct AnswerFilter {
    held: String,
    closed: bool,
}

impl AnswerFilter {
    const CLOSE: &'static str = "</answer>";

    fn push(&mut self, chunk: &str) -> String {
        if self.closed {
            return String::new();
        }
        self.held.push_str(chunk);
        if let Some(pos) = self.held.find(Self::CLOSE) {
            self.closed = true;
            let out = self.held[..pos].to_string();
            self.held.clear();
            return out;
        }
        let keep = (1..Self::CLOSE.len())
            .rev()
            .find(|k| self.held.ends_with(&Self::CLOSE[..*k]))
            .unwrap_or(0);
        let cut = self.held.len() - keep;
        let out = self.held[..cut].to_string();
        self.held.drain(..cut);
        out
    }

    fn finish(&mut self) -> String {
        std::mem::take(&mut self.held)
    }
}

impl Engine {
    pub fn new(providers: ProviderSet, catalog: Arc<PromptCatalog>, cfg: EngineConfig) -> Self {
        let ops = OperatorContext::new(catalog, providers.operator.clone()).with_retry(cfg.retry);
        Engine {
            providers,
            ops,
            cfg,
            store: None,
        }
    }

    /// Persist sessions on every phase change and edit.
    pub fn with_store(mut self, store: SessionStore) -> Self {
        self.store = Some(store);
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn store(&self) -> Option<&SessionStore> {
        self.store.as_ref()
    }

    fn persist(&self, s: &mut Session) {
        s.updated_at = now_secs();
        if let Some(store) = &self.store {
            if let Err(e) = store.save(s) {
                tracing::warn!(session = %s.id, error = %e, "failed to persist session");
            }
        }
    }

    fn fail(&self, s: &mut Session, err: EngineError) -> EngineError {
        s.push(EventKind::Error {
            code: err.code().to_string(),
            message: err.to_string(),
        });
        self.persist(s);
        err
    }

    fn require_edit_phase(&self, s: &Session, operation: &str) -> Result<(), EngineError> {
        if s.phase.allows_edits() {
            Ok(())
        } else {
            Err(EngineError::InvalidPhase {
                operation: operation.to_string(),
                phase: s.phase,
            })
        }
    }

    /// A fresh session in phase Asking.
    pub fn create_session(&self, prompt: &str) -> Result<Session, EngineError> {
        if prompt.trim().is_empty() {
            return Err(EngineError::EmptyPrompt);
        }
        let mut s = Session::new(SessionId::generate(), prompt.to_string());
        self.persist(&mut s);
        Ok(s)
    }

    /// Runs the reasoning model and structures its chain. On return the
    /// session is in Structuring with every node pending.
    pub async fn start(&self, s: &mut Session) -> Result<(), EngineError> {
        if s.phase != Phase::Asking {
            return Err(EngineError::InvalidPhase {
                operation: "start".into(),
                phase: s.phase,
            });
        }
        s.phase = Phase::Reasoning;
        self.persist(s);
        let prompt = s.user_prompt.clone();
        let stream = self
            .cfg
            .retry
            .run(|| self.providers.reasoning.reason(&prompt))
            .await;
        let mut stream = match stream {
            Ok(st) => st,
            Err(e) => return Err(self.fail(s, e.into())),
        };
        while let Some(item) = stream.next().await {
            match item {
                Ok(ReasonChunk::Delta(d)) => match d.channel {
                    Channel::Think => s.raw_think.push_str(&d.delta),
                    Channel::Answer => s.initial_answer.push_str(&d.delta),
                },
                Ok(ReasonChunk::Done(_)) => break,
                Err(e) => return Err(self.fail(s, e.into())),
            }
        }
        if let Err(e) = self.structure(s).await {
            return Err(self.fail(s, e));
        }
        Ok(())
    }

    /// Structures a recorded chain as if the reasoning model had produced
    /// it, skipping the reasoning call.
    pub async fn start_from_chain(&self, s: &mut Session, chain: &str) -> Result<(), EngineError> {
        if s.phase != Phase::Asking {
            return Err(EngineError::InvalidPhase {
                operation: "start".into(),
                phase: s.phase,
            });
        }
        s.raw_think = chain.to_string();
        if let Err(e) = self.structure(s).await {
            return Err(self.fail(s, e));
        }
        Ok(())
    }

    /// Group, structure and clarify `raw_think`, staging the nodes.
    async fn structure(&self, s: &mut Session) -> Result<(), EngineError> {
        let raw = s.raw_think.trim().to_string();
        let mut roots = Vec::new();
        let mut next = NodeId(1);
        if !raw.is_empty() {
            let seg = group_thoughts(&self.ops, &raw, &s.user_prompt, self.cfg.group).await?;
            let structured = futures::future::join_all(
                seg.segments
                    .iter()
                    .map(|text| structure_segment(&self.ops, text, NodeId(1))),
            )
            .await
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
            let context = structured
                .iter()
                .map(|st| st.tagged.as_str())
                .collect::<Vec<_>>()
                .join("\n\n");
            let clarified = futures::future::join_all(
                structured
                    .iter()
                    .map(|st| clarify(&self.ops, &st.tagged, &context, NodeId(1))),
            )
            .await
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
            for st in &structured {
                s.diagnostics.extend(st.diagnostics.iter().cloned());
            }
            for c in clarified {
                let mut parser = TagParser::starting_at(next);
                parser.feed(&c.tagged);
                let out = parser.finish();
                s.diagnostics.extend(out.diagnostics);
                next = out.next_id;
                roots.extend(out.tree.roots);
                s.tagged_segments.push(c.tagged);
            }
            s.segments = Some(seg);
        }
        stage(&ReasoningTree::new(roots), s);
        s.next_id = next;
        s.phase = Phase::Structuring;
        self.persist(s);
        Ok(())
    }

    /// Reveals the next pending node.
    pub async fn step(&self, s: &mut Session) -> Result<Step, EngineError> {
        if s.phase != Phase::Structuring {
            return Ok(Step::Idle);
        }
        if let Some(id) = s.halted_at {
            return Ok(Step::Halted(id));
        }
        if s.paused {
            return Ok(Step::Paused);
        }
        let next = loop {
            match s.pending.pop_front() {
                None => break None,
                Some(p) if p.parent.is_some_and(|id| !s.tree.contains(id)) => {
                    tracing::debug!(id = %p.node.id, "parent removed; dropping pending node");
                }
                Some(p) => break Some(p),
            }
        };
        let Some(PendingNode { parent, mut node }) = next else {
            s.phase = Phase::TreeReady;
            s.push(EventKind::TreeComplete {
                node_count: s.tree.node_count(),
            });
            self.persist(s);
            return Ok(Step::Complete);
        };
        let mut halt = false;
        if node.kind == NodeKind::Feedback {
            let dup = is_duplicate_question(
                &node.text,
                &mut s.registry,
                self.providers.embedding.as_ref(),
                &self.cfg.clarify,
            )
            .await;
            if dup {
                node.kind = NodeKind::Branch;
                node.status = NodeStatus::Complete;
            } else {
                halt = true;
            }
        }
        let id = node.id;
        let text = std::mem::take(&mut node.text);
        let final_status = node.status;
        node.status = NodeStatus::Generating;
        let index = match parent {
            Some(p) => {
                let parent = s.tree.find_mut(p).expect("checked above");
                parent.children.push(node.clone());
                parent.children.len() - 1
            }
            None => {
                s.tree.roots.push(node.clone());
                s.tree.roots.len() - 1
            }
        };
        s.push(EventKind::NodeAdded {
            node: NodeSnapshot::from(&node),
            parent,
            index,
        });
        let words: Vec<&str> = text.split_whitespace().collect();
        for (i, w) in words.iter().enumerate() {
            let delta = if i + 1 < words.len() { format!("{w} ") } else { w.to_string() };
            s.tree.find_mut(id).expect("just inserted").text.push_str(&delta);
            s.push(EventKind::NodeTextDelta { id, delta });
        }
        let n = s.tree.find_mut(id).expect("just inserted");
        n.text = text.clone();
        n.status = final_status;
        s.push(EventKind::NodeCompleted {
            id,
            status: final_status,
        });
        if halt {
            s.halted_at = Some(id);
            s.push(EventKind::FeedbackRequired { id, question: text });
            self.persist(s);
            return Ok(Step::Halted(id));
        }
        Ok(Step::Emitted(id))
    }

    /// Reveals nodes until halted, paused or done.
    pub async fn run(&self, s: &mut Session) -> Result<Step, EngineError> {
        loop {
            match self.step(s).await? {
                Step::Emitted(_) => continue,
                other => {
                    self.persist(s);
                    return Ok(other);
                }
            }
        }
    }

    pub fn pause(&self, s: &mut Session) -> Result<(), EngineError> {
        if s.phase != Phase::Structuring {
            return Err(EngineError::InvalidPhase {
                operation: "pause".into(),
                phase: s.phase,
            });
        }
        if !s.paused {
            s.paused = true;
            s.push(EventKind::GenerationPaused {
                reason: PauseReason::User,
            });
            self.persist(s);
        }
        Ok(())
    }

    pub fn resume(&self, s: &mut Session) -> Result<(), EngineError> {
        if s.phase != Phase::Structuring {
            return Err(EngineError::InvalidPhase {
                operation: "resume".into(),
                phase: s.phase,
            });
        }
        if s.paused {
            s.paused = false;
            s.push(EventKind::GenerationResumed {
                reason: PauseReason::User,
            });
            self.persist(s);
        }
        Ok(())
    }

    fn release_halt(&self, s: &mut Session, id: NodeId) {
        if s.halted_at == Some(id) {
            s.halted_at = None;
            s.push(EventKind::GenerationResumed {
                reason: PauseReason::Feedback,
            });
        }
    }

    /// Answers (or, with `None`, skips) a feedback question. An answer adds
    /// a generated follow-up as the node's first child.
    pub async fn submit_feedback(
        &self,
        s: &mut Session,
        id: NodeId,
        answer: Option<String>,
    ) -> Result<(), EngineError> {
        self.require_edit_phase(s, "submit_feedback")?;
        let node = s.tree.find(id).ok_or(EngineError::UnknownId(id))?;
        if node.kind != NodeKind::Feedback || node.status != NodeStatus::AwaitingFeedback {
            return Err(EngineError::NotAwaitingFeedback(id));
        }
        let answer = answer.map(|a| a.trim().to_string()).filter(|a| !a.is_empty());
        match answer {
            None => {
                s.tree = apply_edit(&s.tree, Edit::SkipFeedback { id })?;
                self.push_updated(s, id);
            }
            Some(answer) => {
                s.tree = apply_edit(
                    &s.tree,
                    Edit::AnswerFeedback {
                        id,
                        answer: answer.clone(),
                    },
                )?;
                self.push_updated(s, id);
                let path = path_text(&s.tree.path_to(id));
                let question = s.tree.find(id).expect("exists").text.clone();
                let res = self
                    .ops
                    .call(
                        FOLLOW_UP,
                        &[
                            ("query", &s.user_prompt),
                            ("path", &path),
                            ("question", &question),
                            ("answer", &answer),
                        ],
                    )
                    .await;
                match res.map_err(EngineError::from)?.map(|c| clean(&c)) {
                    Ok(text) if !text.is_empty() => {
                        let index = usize::from(
                            s.tree.find(id).expect("exists").summary_child().is_some(),
                        );
                        let child = ReasoningNode::new(s.next_id, NodeKind::Branch, text)
                            .with_provenance(Provenance::Regenerated);
                        self.insert(s, id, index, child)?;
                    }
                    Ok(_) => {
                        s.push(EventKind::Error {
                            code: "ProviderFailure".into(),
                            message: "follow-up completion was empty".into(),
                        });
                    }
                    Err(e) => {
                        s.push(EventKind::Error {
                            code: "ProviderFailure".into(),
                            message: format!("follow-up generation failed: {e}"),
                        });
                    }
                }
            }
        }
        self.release_halt(s, id);
        self.persist(s);
        Ok(())
    }

    fn push_updated(&self, s: &mut Session, id: NodeId) {
        if let Some(n) = s.tree.find(id) {
            let node = NodeSnapshot::from(n);
            s.push(EventKind::NodeUpdated { node });
        }
    }

    fn insert(
        &self,
        s: &mut Session,
        parent: NodeId,
        index: usize,
        node: ReasoningNode,
    ) -> Result<NodeId, EngineError> {
        let id = node.id;
        let snapshot = NodeSnapshot::from(&node);
        s.tree = apply_edit(&s.tree, Edit::InsertChild { parent, index, node })?;
        s.alloc_id();
        s.push(EventKind::NodeAdded {
            node: snapshot,
            parent: Some(parent),
            index,
        });
        Ok(id)
    }

    /// Generates a new last child of `id` following the user's instruction.
    pub async fn branch_out(
        &self,
        s: &mut Session,
        id: NodeId,
        instruction: &str,
    ) -> Result<NodeId, EngineError> {
        self.require_edit_phase(s, "branch_out")?;
        let node = s.tree.find(id).ok_or(EngineError::UnknownId(id))?;
        if node.kind == NodeKind::Summary {
            return Err(EngineError::InvalidTarget {
                id,
                reason: "summary nodes are leaves".into(),
            });
        }
        if instruction.trim().is_empty() {
            return Err(EngineError::EmptyPrompt);
        }
        let index = node.children.len();
        let path = path_text(&s.tree.path_to(id));
        let res = self
            .ops
            .call(
                BRANCH,
                &[
                    ("query", &s.user_prompt),
                    ("path", &path),
                    ("instruction", instruction.trim()),
                ],
            )
            .await
            .map_err(EngineError::from)?;
        let text = match res.map(|c| clean(&c)) {
            Ok(t) if !t.is_empty() => t,
            Ok(_) => {
                let e = EngineError::Provider(ProviderError::Malformed("empty completion".into()));
                return Err(self.fail(s, e));
            }
            Err(e) => return Err(self.fail(s, e.into())),
        };
        let mut child = ReasoningNode::new(s.next_id, NodeKind::Branch, text)
            .with_provenance(Provenance::Regenerated);
        child.user_prompt = Some(instruction.trim().to_string());
        let new_id = self.insert(s, id, index, child)?;
        self.persist(s);
        Ok(new_id)
    }

    /// Rewrites one node's text from its ancestors; children are kept.
    pub async fn regenerate(&self, s: &mut Session, id: NodeId) -> Result<(), EngineError> {
        self.require_edit_phase(s, "regenerate")?;
        let node = s.tree.find(id).ok_or(EngineError::UnknownId(id))?;
        if !matches!(node.kind, NodeKind::Topic | NodeKind::Branch) {
            return Err(EngineError::InvalidTarget {
                id,
                reason: "only topic and branch nodes can be regenerated".into(),
            });
        }
        let previous = node.text.clone();
        let path_nodes = s.tree.path_to(id);
        let path = path_text(&path_nodes[..path_nodes.len() - 1]);
        let res = self
            .ops
            .call(
                REGENERATE,
                &[("query", &s.user_prompt), ("path", &path), ("previous", &previous)],
            )
            .await
            .map_err(EngineError::from)?;
        let text = match res.map(|c| clean(&c)) {
            Ok(t) if !t.is_empty() => t,
            Ok(_) => {
                let e = EngineError::Provider(ProviderError::Malformed("empty completion".into()));
                return Err(self.fail(s, e));
            }
            Err(e) => return Err(self.fail(s, e.into())),
        };
        let n = s.tree.find_mut(id).expect("exists");
        n.text = text;
        n.provenance = Provenance::Regenerated;
        self.push_updated(s, id);
        self.persist(s);
        Ok(())
    }

    pub fn set_text(&self, s: &mut Session, id: NodeId, text: &str) -> Result<(), EngineError> {
        self.require_edit_phase(s, "set_text")?;
        s.tree = apply_edit(
            &s.tree,
            Edit::SetText {
                id,
                text: text.to_string(),
            },
        )?;
        self.push_updated(s, id);
        self.persist(s);
        Ok(())
    }

    /// Removes a node and its subtree, including any of its pending
    /// descendants.
    pub fn delete(&self, s: &mut Session, id: NodeId) -> Result<(), EngineError> {
        self.require_edit_phase(s, "delete")?;
        let node = s.tree.find(id).ok_or(EngineError::UnknownId(id))?;
        let mut removed: Vec<NodeId> = Vec::new();
        collect_ids(node, &mut removed);
        let parent = s.tree.parent_of(id).map(|p| (p.id, p.status));
        s.tree = apply_edit(&s.tree, Edit::Delete { id })?;
        let mut gone: std::collections::BTreeSet<NodeId> = removed.iter().copied().collect();
        s.pending.retain(|p| match p.parent {
            Some(par) if gone.contains(&par) => {
                gone.insert(p.node.id);
                false
            }
            _ => true,
        });
        s.push(EventKind::NodeRemoved { id, removed: removed.clone() });
        if let Some((pid, before)) = parent {
            if s.tree.find(pid).is_some_and(|p| p.status != before) {
                self.push_updated(s, pid);
            }
        }
        if let Some(h) = s.halted_at {
            if gone.contains(&h) {
                self.release_halt(s, h);
            }
        }
        self.persist(s);
        Ok(())
    }

    /// Hides a node's children behind a generated summary.
    pub async fn collapse(&self, s: &mut Session, id: NodeId) -> Result<NodeId, EngineError> {
        self.require_edit_phase(s, "collapse")?;
        let summary_id = s.next_id;
        // Validate before spending a model call.
        apply_edit(
            &s.tree,
            Edit::Collapse {
                id,
                summary_text: "probe".into(),
                summary_id,
            },
        )?;
        let node = s.tree.find(id).expect("validated");
        let mut texts = Vec::new();
        for c in node.content_children() {
            let sub = ReasoningTree::new(vec![c.clone()]);
            texts.extend(
                sub.preorder()
                    .into_iter()
                    .filter(|n| n.kind != NodeKind::Summary && !n.text.trim().is_empty())
                    .map(|n| n.text.clone()),
            );
        }
        if texts.is_empty() {
            texts.push(node.text.clone());
        }
        let summary = summarize_subtree(&self.ops, &texts, self.cfg.summary).await?;
        let text = if summary.text.trim().is_empty() {
            node.text.clone()
        } else {
            summary.text
        };
        s.tree = apply_edit(
            &s.tree,
            Edit::Collapse {
                id,
                summary_text: text,
                summary_id,
            },
        )?;
        s.alloc_id();
        let snap = NodeSnapshot::from(s.tree.find(summary_id).expect("inserted"));
        s.push(EventKind::NodeAdded {
            node: snap,
            parent: Some(id),
            index: 0,
        });
        self.push_updated(s, id);
        self.persist(s);
        Ok(summary_id)
    }

    pub fn expand(&self, s: &mut Session, id: NodeId) -> Result<(), EngineError> {
        self.require_edit_phase(s, "expand")?;
        let summary = s
            .tree
            .find(id)
            .ok_or(EngineError::UnknownId(id))?
            .summary_child()
            .map(|n| n.id);
        s.tree = apply_edit(&s.tree, Edit::Expand { id })?;
        if let Some(sid) = summary {
            s.push(EventKind::NodeRemoved { id: sid, removed: vec![sid] });
        }
        self.push_updated(s, id);
        self.persist(s);
        Ok(())
    }

    /// The regeneration prompt for the current tree.
    pub fn answer_prompt(&self, s: &Session) -> String {
        let think = serialize_think(&s.tree, self.cfg.serialize);
        ThinkEnvelope::new(s.user_prompt.clone(), think).regeneration_prompt()
    }

    /// Regenerates the answer from the edited tree and links it.
    pub async fn generate_answer(&self, s: &mut Session) -> Result<(), EngineError> {
        let pending = s.unresolved_feedback();
        if !pending.is_empty() {
            return Err(EngineError::FeedbackPending(pending));
        }
        if !matches!(s.phase, Phase::TreeReady | Phase::Answered) {
            return Err(EngineError::InvalidPhase {
                operation: "generate_answer".into(),
                phase: s.phase,
            });
        }
        let previous = (s.phase, s.answer.take(), std::mem::take(&mut s.answer_units), s.links.take());
        s.phase = Phase::Answering;
        self.persist(s);
        match self.answer_inner(s).await {
            Ok(()) => Ok(()),
            Err(e) => {
                (s.phase, s.answer, s.answer_units, s.links) = previous;
                Err(self.fail(s, e))
            }
        }
    }

    async fn answer_inner(&self, s: &mut Session) -> Result<(), EngineError> {
        let prompt = self.answer_prompt(s);
        let mut stream = self
            .cfg
            .retry
            .run(|| self.providers.reasoning.reason(&prompt))
            .await?;
        let mut filter = AnswerFilter::default();
        let mut answer = String::new();
        let emit = |s: &mut Session, delta: String, answer: &mut String| {
            if !delta.is_empty() {
                answer.push_str(&delta);
                s.push(EventKind::AnswerDelta { delta });
            }
        };
        while let Some(item) = stream.next().await {
            match item? {
                ReasonChunk::Delta(d) if d.channel == Channel::Answer => {
                    emit(s, filter.push(&d.delta), &mut answer);
                }
                ReasonChunk::Delta(_) => {}
                ReasonChunk::Done(_) => break,
            }
        }
        emit(s, filter.finish(), &mut answer);
        let answer = answer.trim().to_string();
        let units = segment_answer(&answer);
        s.push(EventKind::AnswerComplete {
            answer: answer.clone(),
            units: units.clone(),
        });
        let nodes: Vec<(NodeId, String)> = s
            .tree
            .preorder()
            .into_iter()
            .filter(|n| n.kind != NodeKind::Summary && !n.text.trim().is_empty())
            .map(|n| (n.id, n.text.clone()))
            .collect();
        let outcome = link(&self.ops, &nodes, &units).await?;
        match outcome.unavailable {
            None => {
                s.push(EventKind::LinksReady { links: outcome.map.clone() });
                s.links = Some(outcome.map);
            }
            Some(reason) => {
                s.push(EventKind::LinksUnavailable { reason });
                s.links = None;
            }
        }
        s.answer = Some(answer);
        s.answer_units = units;
        s.phase = Phase::Answered;
        self.persist(s);
        Ok(())
    }
}

fn collect_ids(node: &ReasoningNode, out: &mut Vec<NodeId>) {
    out.push(node.id);
    for c in &node.children {
        collect_ids(c, out);
    }
}

/// Queues every node of `tree` in preorder, detached from its children.
fn stage(tree: &ReasoningTree, s: &mut Session) {
    fn go(node: &ReasoningNode, parent: Option<NodeId>, s: &mut Session) {
        let mut bare = node.clone();
        bare.children.clear();
        s.pending.push_back(PendingNode { parent, node: bare });
        for c in &node.children {
            go(c, Some(node.id), s);
        }
    }
    for r in &tree.roots {
        go(r, None, s);
    }
}
