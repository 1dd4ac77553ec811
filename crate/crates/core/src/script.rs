//! Serializable engine commands, used for replay scripts and by the
//! service's per-session command queue.

use crate::chain::{NodeId, NodeKind, NodeStatus};
use crate::engine::{Engine, EngineError, Step};
use crate::session::{Phase, Session};
use serde::{Deserialize, Serialize};

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    /// Reason and structure; only valid in phase Asking.
    Start,
    /// Reveal up to `count` nodes.
    Step {
        #[serde(default = "one")]
        count: usize,
    },
    /// Reveal nodes until halted, paused or done.
    Run,
    Pause,
    Resume,
    Feedback {
        id: NodeId,
        #[serde(default)]
        answer: Option<String>,
    },
    BranchOut {
        id: NodeId,
        prompt: String,
    },
    Regenerate {
        id: NodeId,
    },
    SetText {
        id: NodeId,
        text: String,
    },
    Delete {
        id: NodeId,
    },
    Collapse {
        id: NodeId,
    },
    Expand {
        id: NodeId,
    },
    GenerateAnswer,
}

impl Command {
    /// The node the command targets, if any.
    pub fn target(&self) -> Option<NodeId> {
        match self {
            Command::Feedback { id, .. }
            | Command::BranchOut { id, .. }
            | Command::Regenerate { id }
            | Command::SetText { id, .. }
            | Command::Delete { id }
            | Command::Collapse { id }
            | Command::Expand { id } => Some(*id),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// A node was created (branch-out or collapse summary).
    Node(NodeId),
    Step(Step),
}

fn phase_error(cmd: &Command, s: &Session) -> EngineError {
    EngineError::InvalidPhase {
        operation: cmd.name().to_string(),
        phase: s.phase,
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Start => "start",
            Command::Step { .. } => "step",
            Command::Run => "run",
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::Feedback { .. } => "submit_feedback",
            Command::BranchOut { .. } => "branch_out",
            Command::Regenerate { .. } => "regenerate",
            Command::SetText { .. } => "set_text",
            Command::Delete { .. } => "delete",
            Command::Collapse { .. } => "collapse",
            Command::Expand { .. } => "expand",
            Command::GenerateAnswer => "generate_answer",
        }
    }
}

impl Engine {
    /// The preconditions `apply` would reject, checked without side effects
    /// or model calls. Edit validity beyond node existence (for example
    /// collapsing a leaf) is only known once the command runs.
    pub fn check(&self, s: &Session, cmd: &Command) -> Result<(), EngineError> {
        match cmd {
            Command::Start if s.phase != Phase::Asking => return Err(phase_error(cmd, s)),
            Command::Pause | Command::Resume if s.phase != Phase::Structuring => {
                return Err(phase_error(cmd, s))
            }
            Command::GenerateAnswer => {
                let pending = s.unresolved_feedback();
                if !pending.is_empty() {
                    return Err(EngineError::FeedbackPending(pending));
                }
                if !matches!(s.phase, Phase::TreeReady | Phase::Answered) {
                    return Err(phase_error(cmd, s));
                }
            }
            _ => {}
        }
        let Some(id) = cmd.target() else {
            return Ok(());
        };
        if !s.phase.allows_edits() {
            return Err(phase_error(cmd, s));
        }
        let node = s.tree.find(id).ok_or(EngineError::UnknownId(id))?;
        match cmd {
            Command::Feedback { .. }
                if node.kind != NodeKind::Feedback || node.status != NodeStatus::AwaitingFeedback =>
            {
                Err(EngineError::NotAwaitingFeedback(id))
            }
            Command::Regenerate { .. } if !matches!(node.kind, NodeKind::Topic | NodeKind::Branch) => {
                Err(EngineError::InvalidTarget {
                    id,
                    reason: "only topic and branch nodes can be regenerated".into(),
                })
            }
            Command::BranchOut { prompt, .. } => {
                if node.kind == NodeKind::Summary {
                    Err(EngineError::InvalidTarget {
                        id,
                        reason: "summary nodes are leaves".into(),
                    })
                } else if prompt.trim().is_empty() {
                    Err(EngineError::EmptyPrompt)
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub async fn apply(&self, s: &mut Session, cmd: &Command) -> Result<Outcome, EngineError> {
        Ok(match cmd {
            Command::Start => {
                self.start(s).await?;
                Outcome::Done
            }
            Command::Step { count } => {
                let mut last = Step::Idle;
                for _ in 0..*count {
                    last = self.step(s).await?;
                    if !matches!(last, Step::Emitted(_)) {
                        break;
                    }
                }
                Outcome::Step(last)
            }
            Command::Run => Outcome::Step(self.run(s).await?),
            Command::Pause => {
                self.pause(s)?;
                Outcome::Done
            }
            Command::Resume => {
                self.resume(s)?;
                Outcome::Done
            }
            Command::Feedback { id, answer } => {
                self.submit_feedback(s, *id, answer.clone()).await?;
                Outcome::Done
            }
            Command::BranchOut { id, prompt } => Outcome::Node(self.branch_out(s, *id, prompt).await?),
            Command::Regenerate { id } => {
                self.regenerate(s, *id).await?;
                Outcome::Done
            }
            Command::SetText { id, text } => {
                self.set_text(s, *id, text)?;
                Outcome::Done
            }
            Command::Delete { id } => {
                self.delete(s, *id)?;
                Outcome::Done
            }
            Command::Collapse { id } => Outcome::Node(self.collapse(s, *id).await?),
            Command::Expand { id } => {
                self.expand(s, *id)?;
                Outcome::Done
            }
            Command::GenerateAnswer => {
                self.generate_answer(s).await?;
                Outcome::Done
            }
        })
    }
}
