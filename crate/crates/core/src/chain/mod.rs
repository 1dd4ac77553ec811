//! The reasoning tree: node types, the tag parser, the think-text serializer
//! and the edit algebra.

mod edit;
mod parser;
mod serialize;

pub use edit::{apply_edit, Edit, EditError};
pub use parser::{
    parse_tagged, DiagnosticSeverity, NodeEvent, ParseDiagnostic, ParseOutput, TagParser,
    MAX_DEPTH,
};
pub use serialize::{serialize_think, SerializeOptions, ThinkEnvelope, FEEDBACK_ANSWER_PREFIX};

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// Per-session node identifier. Assigned monotonically when a node is opened.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Topic,
    Branch,
    Feedback,
    Summary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Generating,
    Complete,
    AwaitingFeedback,
    Answered,
    Skipped,
    Collapsed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ModelEmitted,
    UserAdded,
    UserEdited,
    Regenerated,
    SummaryDerived,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasoningNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub text: String,
    pub status: NodeStatus,
    #[serde(default)]
    pub feedback_answer: Option<String>,
    pub provenance: Provenance,
    /// The user's instruction, for nodes generated by branching out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_prompt: Option<String>,
    #[serde(default)]
    pub children: Vec<ReasoningNode>,
}

impl ReasoningNode {
    pub fn new(id: NodeId, kind: NodeKind, text: impl Into<String>) -> Self {
        let status = match kind {
            NodeKind::Feedback => NodeStatus::AwaitingFeedback,
            _ => NodeStatus::Complete,
        };
        let provenance = match kind {
            NodeKind::Summary => Provenance::SummaryDerived,
            _ => Provenance::ModelEmitted,
        };
        ReasoningNode {
            id,
            kind,
            text: text.into(),
            status,
            feedback_answer: None,
            provenance,
            user_prompt: None,
            children: Vec::new(),
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn with_children(mut self, children: Vec<ReasoningNode>) -> Self {
        self.children = children;
        self
    }

    /// Number of nodes in this subtree, including `self`.
    pub fn subtree_size(&self) -> usize {
        1 + self.children.iter().map(|c| c.subtree_size()).sum::<usize>()
    }

    /// Children other than a collapse summary.
    pub fn content_children(&self) -> impl Iterator<Item = &ReasoningNode> {
        self.children.iter().filter(|c| c.kind != NodeKind::Summary)
    }

    pub fn summary_child(&self) -> Option<&ReasoningNode> {
        self.children.iter().find(|c| c.kind == NodeKind::Summary)
    }

    /// Kind, text and child shape agree; ids, status and provenance are ignored.
    pub fn shape_eq(&self, other: &ReasoningNode) -> bool {
        self.kind == other.kind
            && self.text == other.text
            && self.children.len() == other.children.len()
            && self
                .children
                .iter()
                .zip(&other.children)
                .all(|(a, b)| a.shape_eq(b))
    }

    fn walk<'a>(&'a self, depth: usize, out: &mut Vec<(usize, &'a ReasoningNode)>) {
        out.push((depth, self));
        for c in &self.children {
            c.walk(depth + 1, out);
        }
    }
}

/// A forest of topic-rooted reasoning trees plus the collapse bookkeeping.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTree {
    pub roots: Vec<ReasoningNode>,
    #[serde(default)]
    pub collapsed: BTreeSet<NodeId>,
}

/// A broken tree invariant, reported by [`ReasoningTree::validate`].
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("node {id}: {reason}")]
pub struct InvariantViolation {
    pub id: NodeId,
    pub reason: String,
}

impl ReasoningTree {
    pub fn new(roots: Vec<ReasoningNode>) -> Self {
        ReasoningTree {
            roots,
            collapsed: BTreeSet::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Preorder walk as `(depth, node)` pairs; roots have depth 1.
    pub fn preorder_with_depth(&self) -> Vec<(usize, &ReasoningNode)> {
        let mut out = Vec::new();
        for r in &self.roots {
            r.walk(1, &mut out);
        }
        out
    }

    pub fn preorder(&self) -> Vec<&ReasoningNode> {
        self.preorder_with_depth().into_iter().map(|(_, n)| n).collect()
    }

    pub fn preorder_ids(&self) -> Vec<NodeId> {
        self.preorder().iter().map(|n| n.id).collect()
    }

    pub fn node_count(&self) -> usize {
        self.roots.iter().map(|r| r.subtree_size()).sum()
    }

    /// Smallest id strictly greater than every id in the tree.
    pub fn next_id(&self) -> NodeId {
        NodeId(self.preorder().iter().map(|n| n.id.0 + 1).max().unwrap_or(1))
    }

    pub fn find(&self, id: NodeId) -> Option<&ReasoningNode> {
        fn go(nodes: &[ReasoningNode], id: NodeId) -> Option<&ReasoningNode> {
            for n in nodes {
                if n.id == id {
                    return Some(n);
                }
                if let Some(hit) = go(&n.children, id) {
                    return Some(hit);
                }
            }
            None
        }
        go(&self.roots, id)
    }

    pub fn find_mut(&mut self, id: NodeId) -> Option<&mut ReasoningNode> {
        fn go(nodes: &mut [ReasoningNode], id: NodeId) -> Option<&mut ReasoningNode> {
            for n in nodes {
                if n.id == id {
                    return Some(n);
                }
                if let Some(hit) = go(&mut n.children, id) {
                    return Some(hit);
                }
            }
            None
        }
        go(&mut self.roots, id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.find(id).is_some()
    }

    /// The chain of nodes from a root down to `id`, inclusive. Empty when
    /// the id is unknown.
    pub fn path_to(&self, id: NodeId) -> Vec<&ReasoningNode> {
        fn go<'a>(
            nodes: &'a [ReasoningNode],
            id: NodeId,
            path: &mut Vec<&'a ReasoningNode>,
        ) -> bool {
            for n in nodes {
                path.push(n);
                if n.id == id || go(&n.children, id, path) {
                    return true;
                }
                path.pop();
            }
            false
        }
        let mut path = Vec::new();
        go(&self.roots, id, &mut path);
        path
    }

    pub fn parent_of(&self, id: NodeId) -> Option<&ReasoningNode> {
        let path = self.path_to(id);
        if path.len() >= 2 {
            Some(path[path.len() - 2])
        } else {
            None
        }
    }

    pub fn shape_eq(&self, other: &ReasoningTree) -> bool {
        self.roots.len() == other.roots.len()
            && self
                .roots
                .iter()
                .zip(&other.roots)
                .all(|(a, b)| a.shape_eq(b))
    }

    /// Node texts in preorder, joined by single spaces and whitespace
    /// normalized. Summary nodes are skipped.
    pub fn preorder_text(&self) -> String {
        let parts: Vec<&str> = self
            .preorder()
            .into_iter()
            .filter(|n| n.kind != NodeKind::Summary)
            .map(|n| n.text.as_str())
            .collect();
        crate::text::normalize_ws(&parts.join(" "))
    }

    /// Checks every structural invariant of the tree.
    ///
    /// A node whose text is empty is accepted only when it has children: the
    /// structuring prompt's own example opens a branch that directly nests
    /// further branches.
    pub fn validate(&self) -> Result<(), InvariantViolation> {
        let mut seen = BTreeSet::new();
        for (depth, node) in self.preorder_with_depth() {
            let fail = |reason: &str| InvariantViolation {
                id: node.id,
                reason: reason.to_string(),
            };
            if !seen.insert(node.id) {
                return Err(fail("duplicate id"));
            }
            match node.kind {
                NodeKind::Topic if depth != 1 => return Err(fail("topic below the top level")),
                NodeKind::Feedback | NodeKind::Branch | NodeKind::Summary if depth == 1 => {
                    return Err(fail("non-topic node at the top level"))
                }
                _ => {}
            }
            let answered = node.status == NodeStatus::Answered;
            let has_answer = node
                .feedback_answer
                .as_deref()
                .is_some_and(|a| !a.trim().is_empty());
            if answered != has_answer {
                return Err(fail("feedback_answer present without Answered status or vice versa"));
            }
            if answered && node.kind != NodeKind::Feedback {
                return Err(fail("only feedback nodes can be answered"));
            }
            if node.kind == NodeKind::Summary
                && (!node.children.is_empty() || node.provenance != Provenance::SummaryDerived)
            {
                return Err(fail("summary must be a SummaryDerived leaf"));
            }
            if node.status == NodeStatus::Complete
                && node.text.trim().is_empty()
                && node.children.is_empty()
            {
                return Err(fail("complete leaf with empty text"));
            }
        }
        for id in &self.collapsed {
            match self.find(*id) {
                None => {
                    return Err(InvariantViolation {
                        id: *id,
                        reason: "collapsed id not in tree".into(),
                    })
                }
                Some(n) if n.children.is_empty() => {
                    return Err(InvariantViolation {
                        id: *id,
                        reason: "collapsed node without children".into(),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }
}
