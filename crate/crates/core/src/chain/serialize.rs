use super::{NodeKind, NodeStatus, ReasoningNode, ReasoningTree};
use serde::{Deserialize, Serialize};

/// Marker line that carries a user's answer to a feedback question.
pub const FEEDBACK_ANSWER_PREFIX: &str = "User clarification: ";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SerializeOptions {
    /// For collapsed nodes, emit the summary instead of the hidden subtree.
    pub include_summaries: bool,
    /// Follow answered feedback questions with a clarification line.
    pub include_feedback_answers: bool,
}

/// Flattens the tree back into tag-free thinking text: node texts in
/// preorder, separated by blank lines.
pub fn serialize_think(tree: &ReasoningTree, options: SerializeOptions) -> String {
    let mut parts = Vec::new();
    for root in &tree.roots {
        collect(tree, root, options, &mut parts);
    }
    parts.join("\n\n")
}

fn collect(tree: &ReasoningTree, node: &ReasoningNode, options: SerializeOptions, parts: &mut Vec<String>) {
    if node.kind == NodeKind::Summary {
        return;
    }
    if !node.text.trim().is_empty() {
        let mut part = node.text.clone();
        if options.include_feedback_answers && node.status == NodeStatus::Answered {
            if let Some(answer) = &node.feedback_answer {
                part.push('\n');
                part.push_str(FEEDBACK_ANSWER_PREFIX);
                part.push_str(answer);
            }
        }
        parts.push(part);
    }
    if options.include_summaries && tree.collapsed.contains(&node.id) {
        if let Some(summary) = node.summary_child() {
            parts.push(summary.text.clone());
            return;
        }
    }
    for child in node.content_children() {
        collect(tree, child, options, parts);
    }
}

/// The user prompt plus edited thinking text, wrapped in the reasoning
/// model's think delimiters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThinkEnvelope {
    pub original_prompt: String,
    pub think_text: String,
    pub open_delimiter: String,
    pub close_delimiter: String,
}

impl ThinkEnvelope {
    pub const THINK_OPEN: &'static str = "<think>";
    pub const THINK_CLOSE: &'static str = "</think>";
    pub const ANSWER_OPEN: &'static str = "<answer>";

    pub fn new(original_prompt: impl Into<String>, think_text: impl Into<String>) -> Self {
        ThinkEnvelope {
            original_prompt: original_prompt.into(),
            think_text: think_text.into(),
            open_delimiter: Self::THINK_OPEN.to_string(),
            close_delimiter: Self::THINK_CLOSE.to_string(),
        }
    }

    /// `prompt`, the delimited thinking block, then the open answer tag.
    /// Nothing else is added.
    pub fn regeneration_prompt(&self) -> String {
        format!(
            "{}\n{}\n{}\n{}\n{}",
            self.original_prompt,
            self.open_delimiter,
            self.think_text,
            self.close_delimiter,
            Self::ANSWER_OPEN
        )
    }
}
