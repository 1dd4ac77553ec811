//! Property tests for the tag parser: round trip through an independent tag
//! emitter, text preservation under malformation, and chunking invariance.

use proptest::prelude::*;
use reasonweave_core::chain::{
    parse_tagged, NodeEvent, NodeId, NodeKind, ReasoningNode, ReasoningTree, TagParser,
};
use reasonweave_core::text::{normalize_ws, strip_tags};

/// Writes a tree back out as tagged text. Deliberately independent of the
/// parser: feedback nodes become `<branch><user>text</user>...</branch>`.
fn emit_tags(tree: &ReasoningTree) -> String {
    fn node(n: &ReasoningNode, out: &mut String, indent: usize) {
        let pad = "  ".repeat(indent);
        let (open, close) = match n.kind {
            NodeKind::Topic => ("<topic>", "</topic>"),
            _ => ("<branch>", "</branch>"),
        };
        out.push_str(&pad);
        out.push_str(open);
        out.push('\n');
        out.push_str(&pad);
        if n.kind == NodeKind::Feedback {
            out.push_str("<user>");
            out.push_str(&n.text);
            out.push_str("</user>");
        } else {
            out.push_str(&n.text);
        }
        out.push('\n');
        for c in &n.children {
            node(c, out, indent + 1);
        }
        out.push_str(&pad);
        out.push_str(close);
        out.push('\n');
    }
    let mut out = String::new();
    for r in &tree.roots {
        node(r, &mut out, 0);
    }
    out
}

const WORDS: &[&str] = &[
    "maybe", "Cancun", "budget?", "1 < 2", "a<b", "</toppic>", "<bran", "café", "ok.", "Wait,",
    "x>y", "<", "\u{2014}", "Hawaii", "\u{1F334}",
];

fn text() -> impl Strategy<Value = String> {
    proptest::collection::vec(proptest::sample::select(WORDS), 1..6).prop_map(|w| w.join(" "))
}

/// Shape-only tree: (is_feedback, text, children).
#[derive(Clone, Debug)]
struct Shape(bool, String, Vec<Shape>);

fn shape(depth: u32) -> BoxedStrategy<Shape> {
    let leaf = (any::<bool>(), text()).prop_map(|(f, t)| Shape(f, t, vec![]));
    leaf.prop_recursive(depth, 200, 4, |inner| {
        (any::<bool>(), text(), proptest::collection::vec(inner, 0..4))
            .prop_map(|(f, t, c)| Shape(f, t, c))
    })
    .boxed()
}

fn forest() -> impl Strategy<Value = ReasoningTree> {
    proptest::collection::vec((text(), proptest::collection::vec(shape(4), 0..4)), 0..4).prop_map(
        |roots| {
            let mut next = 1u64;
            fn build(s: &Shape, next: &mut u64) -> ReasoningNode {
                let id = NodeId(*next);
                *next += 1;
                let kind = if s.0 { NodeKind::Feedback } else { NodeKind::Branch };
                let mut n = ReasoningNode::new(id, kind, s.1.clone());
                n.children = s.2.iter().map(|c| build(c, next)).collect();
                n
            }
            let roots = roots
                .iter()
                .map(|(t, kids)| {
                    let id = NodeId(next);
                    next += 1;
                    let mut n = ReasoningNode::new(id, NodeKind::Topic, t.clone());
                    n.children = kids.iter().map(|k| build(k, &mut next)).collect();
                    n
                })
                .collect();
            ReasoningTree::new(roots)
        },
    )
}

#[derive(Clone, Debug)]
enum Mutation {
    DeleteTag(usize),
    DuplicateTag(usize),
    Truncate(usize),
    InsertTag(usize, usize),
}

fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        any::<usize>().prop_map(Mutation::DeleteTag),
        any::<usize>().prop_map(Mutation::DuplicateTag),
        any::<usize>().prop_map(Mutation::Truncate),
        (any::<usize>(), 0usize..6).prop_map(|(p, t)| Mutation::InsertTag(p, t)),
    ]
}

const TAGS: [&str; 6] = ["<topic>", "</topic>", "<branch>", "</branch>", "<user>", "</user>"];

fn tag_positions(s: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, _) in s.char_indices() {
        for t in TAGS {
            if s[i..].starts_with(t) {
                out.push((i, t.len()));
            }
        }
    }
    out
}

fn mutate(mut s: String, muts: &[Mutation]) -> String {
    for m in muts {
        let tags = tag_positions(&s);
        match *m {
            Mutation::DeleteTag(k) if !tags.is_empty() => {
                let (at, len) = tags[k % tags.len()];
                s.replace_range(at..at + len, "");
            }
            Mutation::DuplicateTag(k) if !tags.is_empty() => {
                let (at, len) = tags[k % tags.len()];
                let tag = s[at..at + len].to_string();
                s.insert_str(at, &tag);
            }
            Mutation::Truncate(k) => {
                let cut: Vec<usize> = s.char_indices().map(|(i, _)| i).collect();
                if !cut.is_empty() {
                    s.truncate(cut[k % cut.len()]);
                }
            }
            Mutation::InsertTag(k, t) => {
                let cut: Vec<usize> = s.char_indices().map(|(i, _)| i).chain([s.len()]).collect();
                s.insert_str(cut[k % cut.len()], TAGS[t]);
            }
            _ => {}
        }
    }
    s
}

fn parse_chunked(input: &str, sizes: &[usize]) -> (reasonweave_core::chain::ParseOutput, Vec<NodeId>) {
    let chars: Vec<char> = input.chars().collect();
    let mut parser = TagParser::new();
    let mut opened = Vec::new();
    let mut dropped = Vec::new();
    let mut i = 0;
    let mut k = 0;
    let record = |evs: Vec<NodeEvent>, opened: &mut Vec<NodeId>, dropped: &mut Vec<NodeId>| {
        for ev in evs {
            match ev {
                NodeEvent::NodeOpened { id, .. } => opened.push(id),
                NodeEvent::NodeDropped { id } => dropped.push(id),
                _ => {}
            }
        }
    };
    while i < chars.len() {
        let n = sizes.get(k).copied().unwrap_or(7).max(1);
        k += 1;
        let end = (i + n).min(chars.len());
        let chunk: String = chars[i..end].iter().collect();
        record(parser.feed(&chunk), &mut opened, &mut dropped);
        i = end;
    }
    let out = parser.finish();
    record(out.events.clone(), &mut opened, &mut dropped);
    opened.retain(|id| !dropped.contains(id));
    (out, opened)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn round_trip_well_formed(tree in forest()) {
        let tagged = emit_tags(&tree);
        let (parsed, diags) = parse_tagged(&tagged);
        prop_assert!(diags.is_empty(), "diagnostics: {:?}\n{}", diags, tagged);
        prop_assert!(parsed.shape_eq(&tree), "tagged:\n{}", tagged);
        prop_assert_eq!(parsed.preorder_ids(), tree.preorder_ids());
        parsed.validate().unwrap();
    }

    #[test]
    fn malformed_input_preserves_text(tree in forest(), muts in proptest::collection::vec(mutation(), 1..6)) {
        let input = mutate(emit_tags(&tree), &muts);
        let (parsed, _) = parse_tagged(&input);
        prop_assert_eq!(parsed.preorder_text(), normalize_ws(&strip_tags(&input)));
        prop_assert!(parsed.validate().is_ok(), "{:?}\n{}", parsed.validate(), input);
    }

    #[test]
    fn chunking_is_invisible(
        tree in forest(),
        muts in proptest::collection::vec(mutation(), 0..3),
        sizes in proptest::collection::vec(1usize..12, 0..200),
    ) {
        let input = mutate(emit_tags(&tree), &muts);
        let whole = {
            let mut p = TagParser::new();
            p.feed(&input);
            p.finish()
        };
        let (chunked, opened) = parse_chunked(&input, &sizes);
        prop_assert_eq!(&chunked.tree, &whole.tree);
        prop_assert_eq!(&chunked.diagnostics, &whole.diagnostics);
        prop_assert_eq!(opened, chunked.tree.preorder_ids());
    }
}

#[test]
fn deep_malformed_nesting_is_preserved() {
    let mut input = String::new();
    for i in 0..40 {
        input.push_str(if i % 3 == 0 { "<user>" } else { "<branch>" });
        input.push_str(&format!("t{i} "));
    }
    input.push_str("</topic>tail");
    let (tree, _) = parse_tagged(&input);
    assert_eq!(tree.preorder_text(), normalize_ws(&strip_tags(&input)));
    tree.validate().unwrap();
    assert!(tree.preorder_with_depth().iter().all(|(d, _)| *d <= 12));
}
