//! Incremental parser for `<topic>`/`<branch>`/`<user>` annotated reasoning.
//!
//! The parser is total: malformed markup is repaired and reported through
//! [`ParseDiagnostic`]s, and every non-tag character of the input ends up in
//! exactly one node, in input order.

use super::{NodeId, NodeKind, NodeStatus, Provenance, ReasoningNode, ReasoningTree};
use crate::text::{normalize_ws, TAG_TOKENS};
use serde::{Deserialize, Serialize};

/// Maximum node depth (roots are depth 1). Deeper nesting is flattened.
pub const MAX_DEPTH: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosticSeverity {
    /// Malformed markup was repaired without losing text.
    Recovered,
    /// Input text was discarded. The repair policy never needs this today.
    Dropped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub severity: DiagnosticSeverity,
    /// Character (not byte) offsets into the parser input, half-open.
    pub span: (usize, usize),
    pub message: String,
}

/// Progress notifications emitted while parsing. `NodeOpened` events arrive
/// in preorder of the final tree (ignoring nodes later reported as dropped).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeEvent {
    NodeOpened {
        id: NodeId,
        kind: NodeKind,
        parent: Option<NodeId>,
    },
    NodeText {
        id: NodeId,
        delta: String,
    },
    /// A branch turned out to carry a `<user>` span and is now a feedback node.
    NodeFlagged { id: NodeId },
    NodeClosed { id: NodeId },
    /// An empty tag pair produced a node with no text and no children; it is
    /// not part of the final tree.
    NodeDropped { id: NodeId },
}

#[derive(Clone, Debug)]
pub struct ParseOutput {
    pub tree: ReasoningTree,
    pub diagnostics: Vec<ParseDiagnostic>,
    /// Events produced while finalizing (closing dangling tags).
    pub events: Vec<NodeEvent>,
    /// First id not used by this parse.
    pub next_id: NodeId,
}

/// Parses a complete string in one pass.
pub fn parse_tagged(input: &str) -> (ReasoningTree, Vec<ParseDiagnostic>) {
    let mut parser = TagParser::new();
    parser.feed(input);
    let out = parser.finish();
    (out.tree, out.diagnostics)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tag {
    Topic,
    Branch,
    User,
}

#[derive(Clone, Copy, Debug)]
enum Token {
    Open(Tag),
    Close(Tag),
}

fn classify(tag: &str) -> Token {
    match tag {
        "<topic>" => Token::Open(Tag::Topic),
        "</topic>" => Token::Close(Tag::Topic),
        "<branch>" => Token::Open(Tag::Branch),
        "</branch>" => Token::Close(Tag::Branch),
        "<user>" => Token::Open(Tag::User),
        _ => Token::Close(Tag::User),
    }
}

fn tag_name(tag: Tag) -> &'static str {
    match tag {
        Tag::Topic => "topic",
        Tag::Branch => "branch",
        Tag::User => "user",
    }
}

/// Splits a chunked character stream into text runs and tag tokens, holding
/// back a trailing `<...` that may still grow into a tag.
#[derive(Clone, Debug, Default)]
struct Lexer {
    pending: String,
    /// Char offset of `pending[0]` in the whole input.
    offset: usize,
}

enum Lexeme {
    Text(String, (usize, usize)),
    Tag(Token, (usize, usize)),
}

impl Lexer {
    fn push(&mut self, chunk: &str, finishing: bool) -> Vec<Lexeme> {
        self.pending.push_str(chunk);
        let mut out = Vec::new();
        let mut text = String::new();
        let mut text_start = self.offset;
        let mut consumed = 0usize; // bytes of `pending` consumed
        let mut pos_chars = self.offset;

        loop {
            let rest = &self.pending[consumed..];
            let Some(lt) = rest.find('<') else {
                text.push_str(rest);
                pos_chars += rest.chars().count();
                consumed = self.pending.len();
                break;
            };
            let before = &rest[..lt];
            text.push_str(before);
            pos_chars += before.chars().count();
            consumed += lt;
            let tail = &self.pending[consumed..];
            if let Some(tag) = TAG_TOKENS.iter().find(|t| tail.starts_with(**t)) {
                if !text.is_empty() {
                    out.push(Lexeme::Text(std::mem::take(&mut text), (text_start, pos_chars)));
                }
                let len = tag.chars().count();
                out.push(Lexeme::Tag(classify(tag), (pos_chars, pos_chars + len)));
                pos_chars += len;
                consumed += tag.len();
                text_start = pos_chars;
                continue;
            }
            let could_grow = TAG_TOKENS
                .iter()
                .any(|t| t.len() > tail.len() && t.starts_with(tail));
            if could_grow && !finishing {
                break;
            }
            text.push('<');
            pos_chars += 1;
            consumed += 1;
        }
        if !text.is_empty() {
            out.push(Lexeme::Text(text, (text_start, pos_chars)));
        }
        self.pending.drain(..consumed);
        self.offset = pos_chars;
        out
    }
}

#[derive(Clone, Debug)]
struct Slot {
    id: NodeId,
    kind: NodeKind,
    raw: String,
    parent: Option<usize>,
    children: Vec<usize>,
    depth: usize,
    removed: bool,
}

#[derive(Clone, Debug)]
struct Frame {
    tag: Tag,
    /// Node opened by this frame, if any.
    node: Option<usize>,
    /// Feedback node created for text inside a `<user>` frame that had no
    /// branch to attach to.
    demoted: Option<usize>,
}

/// Parser state for one stream. Feed chunks in order, then [`finish`].
///
/// [`finish`]: TagParser::finish
#[derive(Clone, Debug)]
pub struct TagParser {
    lexer: Lexer,
    slots: Vec<Slot>,
    roots: Vec<usize>,
    frames: Vec<Frame>,
    target: Option<usize>,
    next_id: u64,
    diagnostics: Vec<ParseDiagnostic>,
    /// Diagnostics describing the current text run; their spans grow as the
    /// run continues across chunks.
    run_diags: Vec<usize>,
    events: Vec<NodeEvent>,
}

impl Default for TagParser {
    fn default() -> Self {
        Self::new()
    }
}

impl TagParser {
    pub fn new() -> Self {
        Self::starting_at(NodeId(1))
    }

    /// A parser whose first node receives `first`. Used to keep ids unique
    /// when several fragments are spliced into one forest.
    pub fn starting_at(first: NodeId) -> Self {
        TagParser {
            lexer: Lexer::default(),
            slots: Vec::new(),
            roots: Vec::new(),
            frames: Vec::new(),
            target: None,
            next_id: first.0,
            diagnostics: Vec::new(),
            run_diags: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn diagnostics(&self) -> &[ParseDiagnostic] {
        &self.diagnostics
    }

    /// Consumes one chunk and returns the node events it produced.
    pub fn feed(&mut self, chunk: &str) -> Vec<NodeEvent> {
        let lexemes = self.lexer.push(chunk, false);
        self.consume(lexemes);
        std::mem::take(&mut self.events)
    }

    /// Flushes held-back input, closes dangling tags and returns the tree.
    pub fn finish(mut self) -> ParseOutput {
        let lexemes = self.lexer.push("", true);
        self.consume(lexemes);
        let end = self.lexer.offset;
        while let Some(frame) = self.frames.pop() {
            self.recovered(
                (end, end),
                format!("unclosed <{}> closed at end of input", tag_name(frame.tag)),
            );
            self.close_frame(frame, (end, end));
        }
        let roots = self
            .roots
            .iter()
            .filter(|&&r| !self.slots[r].removed)
            .map(|&r| self.build(r))
            .collect();
        ParseOutput {
            tree: ReasoningTree::new(roots),
            diagnostics: self.diagnostics,
            events: self.events,
            next_id: NodeId(self.next_id),
        }
    }

    fn build(&self, idx: usize) -> ReasoningNode {
        let slot = &self.slots[idx];
        let mut node = ReasoningNode::new(slot.id, slot.kind, normalize_ws(&slot.raw));
        node.status = match slot.kind {
            NodeKind::Feedback => NodeStatus::AwaitingFeedback,
            _ => NodeStatus::Complete,
        };
        node.provenance = Provenance::ModelEmitted;
        node.children = slot
            .children
            .iter()
            .filter(|&&c| !self.slots[c].removed)
            .map(|&c| self.build(c))
            .collect();
        node
    }

    fn consume(&mut self, lexemes: Vec<Lexeme>) {
        for lx in lexemes {
            match lx {
                Lexeme::Text(t, span) => self.on_text(&t, span),
                Lexeme::Tag(tok, span) => {
                    self.run_diags.clear();
                    self.separate_target();
                    match tok {
                        Token::Open(tag) => self.on_open(tag, span),
                        Token::Close(tag) => self.on_close(tag, span),
                    }
                }
            }
        }
    }

    fn recovered(&mut self, span: (usize, usize), message: impl Into<String>) {
        self.diagnostics.push(ParseDiagnostic {
            severity: DiagnosticSeverity::Recovered,
            span,
            message: message.into(),
        });
    }

    /// A tag between two text runs of the same node acts as a word break.
    fn separate_target(&mut self) {
        if let Some(t) = self.target {
            let raw = &self.slots[t].raw;
            if !raw.is_empty() && !raw.ends_with(char::is_whitespace) {
                self.append(t, " ");
            }
        }
    }

    fn container(&self) -> Option<(usize, usize)> {
        self.frames
            .iter()
            .enumerate()
            .rev()
            .find_map(|(pos, f)| f.node.map(|n| (pos, n)))
    }

    fn user_active(&self) -> bool {
        let from = self.container().map(|(pos, _)| pos + 1).unwrap_or(0);
        self.frames[from..].iter().any(|f| f.tag == Tag::User)
    }

    fn last_root(&self) -> Option<usize> {
        self.roots.iter().rev().copied().find(|&r| !self.slots[r].removed)
    }

    fn last_in_preorder(&self) -> Option<usize> {
        let mut cur = self.last_root()?;
        while let Some(&c) = self.slots[cur]
            .children
            .iter()
            .rev()
            .find(|&&c| !self.slots[c].removed)
        {
            cur = c;
        }
        Some(cur)
    }

    fn append(&mut self, idx: usize, text: &str) {
        self.slots[idx].raw.push_str(text);
        self.events.push(NodeEvent::NodeText {
            id: self.slots[idx].id,
            delta: text.to_string(),
        });
    }

    fn flag(&mut self, idx: usize) {
        if self.slots[idx].kind == NodeKind::Branch {
            self.slots[idx].kind = NodeKind::Feedback;
            self.events.push(NodeEvent::NodeFlagged {
                id: self.slots[idx].id,
            });
        }
    }

    fn create(&mut self, kind: NodeKind, parent: Option<usize>, span: (usize, usize)) -> usize {
        let mut parent = parent;
        if let Some(mut p) = parent {
            if self.slots[p].depth >= MAX_DEPTH {
                while self.slots[p].depth > MAX_DEPTH - 1 {
                    p = self.slots[p].parent.expect("depth > 1 implies a parent");
                }
                parent = Some(p);
                self.recovered(
                    span,
                    format!("nesting deeper than {MAX_DEPTH} levels flattened"),
                );
            }
            let pslot = &self.slots[p];
            if matches!(pslot.kind, NodeKind::Branch | NodeKind::Feedback)
                && pslot.raw.trim().is_empty()
                && !pslot.children.iter().any(|&c| !self.slots[c].removed)
            {
                self.recovered(span, "branch nests a branch before any sentence of its own");
            }
        }
        let idx = self.slots.len();
        let id = NodeId(self.next_id);
        self.next_id += 1;
        let depth = parent.map(|p| self.slots[p].depth + 1).unwrap_or(1);
        self.slots.push(Slot {
            id,
            kind,
            raw: String::new(),
            parent,
            children: Vec::new(),
            depth,
            removed: false,
        });
        match parent {
            Some(p) => self.slots[p].children.push(idx),
            None => self.roots.push(idx),
        }
        self.events.push(NodeEvent::NodeOpened {
            id,
            kind,
            parent: parent.map(|p| self.slots[p].id),
        });
        idx
    }

    fn on_text(&mut self, text: &str, span: (usize, usize)) {
        if let Some(t) = self.target {
            for &i in &self.run_diags {
                self.diagnostics[i].span.1 = span.1;
            }
            self.append(t, text);
            if self.user_active() && !text.trim().is_empty() {
                self.flag(t);
            }
            return;
        }
        if text.trim().is_empty() {
            return;
        }
        let lead = text.chars().take_while(|c| c.is_whitespace()).count();
        let span = (span.0 + lead, span.1);
        let mark = self.diagnostics.len();
        let user = self.user_active();
        let idx = match self.container() {
            None => match (user, self.last_root()) {
                (true, Some(root)) => {
                    self.recovered(span, "<user> text outside any topic attached to the preceding topic as feedback");
                    self.create(NodeKind::Feedback, Some(root), span)
                }
                (true, None) => {
                    self.recovered(span, "<user> text outside any topic kept as a topic; flag dropped");
                    self.create(NodeKind::Topic, None, span)
                }
                (false, _) => {
                    self.recovered(span, "untagged top-level text wrapped as a topic");
                    self.create(NodeKind::Topic, None, span)
                }
            },
            Some((_, c)) => {
                let ckind = self.slots[c].kind;
                let is_last = self.last_in_preorder() == Some(c);
                if is_last && !(user && ckind == NodeKind::Topic) {
                    self.target = Some(c);
                    return self.on_text(text, span);
                }
                if user {
                    if ckind == NodeKind::Topic {
                        self.recovered(span, "<user> at topic level demoted to a feedback child");
                    }
                    self.create(NodeKind::Feedback, Some(c), span)
                } else {
                    self.recovered(span, "untagged text after a nested element wrapped as a branch");
                    self.create(NodeKind::Branch, Some(c), span)
                }
            }
        };
        if user {
            if let Some(f) = self
                .frames
                .iter_mut()
                .rev()
                .find(|f| f.tag == Tag::User && f.demoted.is_none())
            {
                f.demoted = Some(idx);
            }
        }
        self.run_diags = (mark..self.diagnostics.len()).collect();
        self.target = Some(idx);
        self.append(idx, text);
    }

    fn on_open(&mut self, tag: Tag, span: (usize, usize)) {
        match tag {
            Tag::Topic => {
                if !self.frames.is_empty() {
                    self.recovered(span, "nested <topic> moved to the top level; enclosing tags closed");
                    while let Some(frame) = self.frames.pop() {
                        self.close_frame(frame, span);
                    }
                }
                let idx = self.create(NodeKind::Topic, None, span);
                self.frames.push(Frame {
                    tag,
                    node: Some(idx),
                    demoted: None,
                });
                self.target = Some(idx);
            }
            Tag::Branch => {
                let user = self.user_active();
                let kind = if user {
                    NodeKind::Feedback
                } else {
                    NodeKind::Branch
                };
                let idx = match self.container() {
                    Some((_, c)) => self.create(kind, Some(c), span),
                    None => match self.last_root() {
                        Some(root) => {
                            self.recovered(span, "<branch> outside any topic attached to the preceding topic");
                            self.create(kind, Some(root), span)
                        }
                        None => {
                            self.recovered(span, "<branch> before any topic promoted to a topic");
                            if user {
                                self.recovered(span, "<user> flag on a top-level node dropped");
                            }
                            self.create(NodeKind::Topic, None, span)
                        }
                    },
                };
                self.frames.push(Frame {
                    tag,
                    node: Some(idx),
                    demoted: None,
                });
                self.target = Some(idx);
            }
            Tag::User => {
                if self
                    .target
                    .is_some_and(|t| self.slots[t].kind == NodeKind::Topic)
                {
                    self.target = None;
                }
                self.frames.push(Frame {
                    tag,
                    node: None,
                    demoted: None,
                });
            }
        }
    }

    fn on_close(&mut self, tag: Tag, span: (usize, usize)) {
        let Some(pos) = self.frames.iter().rposition(|f| f.tag == tag) else {
            self.recovered(span, format!("stray </{}> ignored", tag_name(tag)));
            return;
        };
        while self.frames.len() > pos + 1 {
            let frame = self.frames.pop().expect("len > pos + 1");
            self.recovered(
                span,
                format!("unclosed <{}> closed by </{}>", tag_name(frame.tag), tag_name(tag)),
            );
            self.close_frame(frame, span);
        }
        let frame = self.frames.pop().expect("frame at pos");
        self.close_frame(frame, span);
    }

    fn close_frame(&mut self, frame: Frame, span: (usize, usize)) {
        if let Some(idx) = frame.node {
            self.close_node(idx, span);
            self.target = None;
        }
        if frame.demoted.is_some() && frame.demoted == self.target {
            self.target = None;
        }
    }

    fn close_node(&mut self, idx: usize, span: (usize, usize)) {
        let id = self.slots[idx].id;
        let empty = self.slots[idx].raw.trim().is_empty()
            && !self.slots[idx]
                .children
                .iter()
                .any(|&c| !self.slots[c].removed);
        if empty {
            self.slots[idx].removed = true;
            self.diagnostics.push(ParseDiagnostic {
                severity: DiagnosticSeverity::Recovered,
                span,
                message: format!("empty tag pair for node {id} removed"),
            });
            self.events.push(NodeEvent::NodeDropped { id });
        } else {
            self.events.push(NodeEvent::NodeClosed { id });
        }
    }
}
