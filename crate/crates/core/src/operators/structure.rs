use super::{lift, OperatorContext, OperatorError};
use crate::chain::{
    DiagnosticSeverity, NodeId, NodeKind, ParseDiagnostic, ReasoningNode, ReasoningTree,
    TagParser,
};
use crate::prompts::STRUCTURE;
use crate::providers::ProviderError;
use crate::text::{normalize_ws, strip_tags};
use futures::StreamExt;

#[derive(Clone, Debug, PartialEq)]
pub struct StructuredSegment {
    /// Tagged text the fragment was parsed from. When degraded this is the
    /// segment wrapped in a single topic.
    pub tagged: String,
    pub tree: ReasoningTree,
    pub diagnostics: Vec<ParseDiagnostic>,
    pub next_id: NodeId,
    pub degraded: bool,
}

impl StructuredSegment {
    fn degraded(segment: &str, first: NodeId, why: String) -> Self {
        let text = normalize_ws(&strip_tags(segment));
        StructuredSegment {
            tagged: format!("<topic>{text}</topic>"),
            tree: ReasoningTree::new(vec![ReasoningNode::new(first, NodeKind::Topic, text)]),
            diagnostics: vec![ParseDiagnostic {
                severity: DiagnosticSeverity::Recovered,
                span: (0, segment.chars().count()),
                message: format!("structuring failed ({why}); segment kept as one topic"),
            }],
            next_id: NodeId(first.0 + 1),
            degraded: true,
        }
    }
}

/// Annotates one segment with topic and branch tags and parses the result,
/// numbering nodes from `first`.
pub async fn structure_segment(
    ctx: &OperatorContext,
    segment: &str,
    first: NodeId,
) -> Result<StructuredSegment, OperatorError> {
    let prompt = ctx.catalog.render(STRUCTURE, &[("reasoning", segment)])?;
    let attempt = || async {
        let mut stream = ctx.provider.complete_stream(STRUCTURE, &prompt).await?;
        let mut parser = TagParser::starting_at(first);
        let mut text = String::new();
        while let Some(chunk) = stream.next().await {
            let chunk = chunk?;
            parser.feed(&chunk);
            text.push_str(&chunk);
        }
        Ok::<_, ProviderError>((text, parser.finish()))
    };
    let (tagged, out) = match lift(ctx.retry.run(attempt).await)? {
        Ok(r) => r,
        Err(e) => return Ok(StructuredSegment::degraded(segment, first, e.to_string())),
    };
    if out.tree.is_empty() {
        return Ok(StructuredSegment::degraded(segment, first, "empty completion".into()));
    }
    if out.tree.preorder_text() != normalize_ws(&strip_tags(segment)) {
        return Ok(StructuredSegment::degraded(
            segment,
            first,
            "completion altered the text".into(),
        ));
    }
    Ok(StructuredSegment {
        tagged,
        tree: out.tree,
        diagnostics: out.diagnostics,
        next_id: out.next_id,
        degraded: false,
    })
}
