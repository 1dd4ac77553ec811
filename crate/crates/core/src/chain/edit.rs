use super::{NodeId, NodeKind, NodeStatus, Provenance, ReasoningNode, ReasoningTree};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    SetText {
        id: NodeId,
        text: String,
    },
    Delete {
        id: NodeId,
    },
    InsertChild {
        parent: NodeId,
        index: usize,
        node: ReasoningNode,
    },
    /// Hides the children of `id` behind a summary node with id `summary_id`.
    Collapse {
        id: NodeId,
        summary_text: String,
        summary_id: NodeId,
    },
    Expand {
        id: NodeId,
    },
    AnswerFeedback {
        id: NodeId,
        answer: String,
    },
    SkipFeedback {
        id: NodeId,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EditError {
    #[error("unknown node id {0}")]
    UnknownId(NodeId),
    #[error("invalid target {id}: {reason}")]
    InvalidTarget { id: NodeId, reason: String },
}

fn invalid(id: NodeId, reason: &str) -> EditError {
    EditError::InvalidTarget {
        id,
        reason: reason.to_string(),
    }
}

/// Applies one edit and returns the edited tree; the input is untouched.
pub fn apply_edit(tree: &ReasoningTree, edit: Edit) -> Result<ReasoningTree, EditError> {
    let mut next = tree.clone();
    match edit {
        Edit::SetText { id, text } => {
            let node = next.find_mut(id).ok_or(EditError::UnknownId(id))?;
            if node.kind == NodeKind::Summary {
                return Err(invalid(id, "summary text is derived; expand and collapse again"));
            }
            if text.trim().is_empty() {
                return Err(invalid(id, "text must be non-empty"));
            }
            node.text = text.trim().to_string();
            node.provenance = Provenance::UserEdited;
        }
        Edit::Delete { id } => {
            let node = tree.find(id).ok_or(EditError::UnknownId(id))?;
            if node.kind == NodeKind::Summary {
                return Err(invalid(id, "summaries are removed by expanding their parent"));
            }
            let removed: BTreeSet<NodeId> = {
                let mut ids = BTreeSet::new();
                collect_ids(node, &mut ids);
                ids
            };
            let parent = tree.parent_of(id).map(|p| p.id);
            remove(&mut next.roots, id);
            next.collapsed.retain(|c| !removed.contains(c));
            if let Some(p) = parent {
                if next.collapsed.contains(&p)
                    && next.find(p).is_some_and(|n| n.content_children().next().is_none())
                {
                    expand(&mut next, p);
                }
            }
        }
        Edit::InsertChild {
            parent,
            index,
            node,
        } => {
            let target = tree.find(parent).ok_or(EditError::UnknownId(parent))?;
            if target.kind == NodeKind::Summary {
                return Err(invalid(parent, "summary nodes are leaves"));
            }
            if index > target.children.len() {
                return Err(invalid(parent, "insert index beyond child count"));
            }
            let mut ids = BTreeSet::new();
            collect_ids(&node, &mut ids);
            if ids.iter().any(|i| tree.contains(*i)) || ids.len() != node.subtree_size() {
                return Err(invalid(node.id, "inserted subtree reuses an existing id"));
            }
            if has_kind(&node, NodeKind::Topic) || has_kind(&node, NodeKind::Summary) {
                return Err(invalid(node.id, "topics and summaries cannot be inserted as children"));
            }
            next.find_mut(parent)
                .expect("checked above")
                .children
                .insert(index, node);
        }
        Edit::Collapse {
            id,
            summary_text,
            summary_id,
        } => {
            let node = tree.find(id).ok_or(EditError::UnknownId(id))?;
            if node.kind == NodeKind::Summary {
                return Err(invalid(id, "summary nodes are leaves"));
            }
            if tree.collapsed.contains(&id) {
                return Err(invalid(id, "already collapsed"));
            }
            if node.content_children().next().is_none() {
                return Err(invalid(id, "cannot collapse a leaf"));
            }
            if summary_text.trim().is_empty() {
                return Err(invalid(id, "summary must be non-empty"));
            }
            if tree.contains(summary_id) {
                return Err(invalid(summary_id, "summary id already in use"));
            }
            let node = next.find_mut(id).expect("checked above");
            node.children.insert(
                0,
                ReasoningNode::new(summary_id, NodeKind::Summary, summary_text.trim()),
            );
            if matches!(node.kind, NodeKind::Topic | NodeKind::Branch) {
                node.status = NodeStatus::Collapsed;
            }
            next.collapsed.insert(id);
        }
        Edit::Expand { id } => {
            if !tree.contains(id) {
                return Err(EditError::UnknownId(id));
            }
            if !tree.collapsed.contains(&id) {
                return Err(invalid(id, "not collapsed"));
            }
            expand(&mut next, id);
        }
        Edit::AnswerFeedback { id, answer } => {
            let node = feedback_target(&mut next, id)?;
            if answer.trim().is_empty() {
                return Err(invalid(id, "answer must be non-empty"));
            }
            node.feedback_answer = Some(answer.trim().to_string());
            node.status = NodeStatus::Answered;
        }
        Edit::SkipFeedback { id } => {
            let node = feedback_target(&mut next, id)?;
            node.status = NodeStatus::Skipped;
        }
    }
    Ok(next)
}

fn feedback_target(tree: &mut ReasoningTree, id: NodeId) -> Result<&mut ReasoningNode, EditError> {
    let node = tree.find_mut(id).ok_or(EditError::UnknownId(id))?;
    if node.kind != NodeKind::Feedback {
        return Err(invalid(id, "not a feedback node"));
    }
    if node.status != NodeStatus::AwaitingFeedback {
        return Err(invalid(id, "feedback already resolved"));
    }
    Ok(node)
}

fn expand(tree: &mut ReasoningTree, id: NodeId) {
    if let Some(node) = tree.find_mut(id) {
        node.children.retain(|c| c.kind != NodeKind::Summary);
        if node.status == NodeStatus::Collapsed {
            node.status = NodeStatus::Complete;
        }
    }
    tree.collapsed.remove(&id);
}

fn collect_ids(node: &ReasoningNode, out: &mut BTreeSet<NodeId>) {
    out.insert(node.id);
    for c in &node.children {
        collect_ids(c, out);
    }
}

fn has_kind(node: &ReasoningNode, kind: NodeKind) -> bool {
    node.kind == kind || node.children.iter().any(|c| has_kind(c, kind))
}

fn remove(nodes: &mut Vec<ReasoningNode>, id: NodeId) -> bool {
    if let Some(pos) = nodes.iter().position(|n| n.id == id) {
        nodes.remove(pos);
        return true;
    }
    nodes.iter_mut().any(|n| remove(&mut n.children, id))
}
