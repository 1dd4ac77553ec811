use super::{OperatorContext, OperatorError};
use crate::chain::{NodeId, ParseDiagnostic, ReasoningTree, TagParser};
use crate::prompts::CLARIFY;
use crate::text::same_text_ignoring_tags;

#[derive(Clone, Debug, PartialEq)]
pub struct Clarified {
    pub tagged: String,
    pub tree: ReasoningTree,
    pub diagnostics: Vec<ParseDiagnostic>,
    /// True when the model output was rejected and the input kept.
    pub passed_through: bool,
}

fn parse(tagged: &str, first: NodeId) -> (ReasoningTree, Vec<ParseDiagnostic>) {
    let mut p = TagParser::starting_at(first);
    p.feed(tagged);
    let out = p.finish();
    (out.tree, out.diagnostics)
}

/// Adds `<user>` tags to sentences that call for the user's input.
///
/// `context` is the tagged text of the whole chain, so the model can see
/// whether a question is answered later. Output that changes the text in any
/// way other than tags and whitespace is discarded.
pub async fn clarify(
    ctx: &OperatorContext,
    tagged: &str,
    context: &str,
    first: NodeId,
) -> Result<Clarified, OperatorError> {
    let pass_through = |why: &str| {
        tracing::warn!(reason = why, "clarify output discarded");
        let (tree, diagnostics) = parse(tagged, first);
        Clarified {
            tagged: tagged.to_string(),
            tree,
            diagnostics,
            passed_through: true,
        }
    };
    let completion = match ctx
        .call(CLARIFY, &[("reasoning", tagged), ("context", context)])
        .await?
    {
        Ok(c) => c,
        Err(e) => return Ok(pass_through(&e.to_string())),
    };
    if completion.trim().is_empty() {
        return Ok(pass_through("empty completion"));
    }
    if !same_text_ignoring_tags(tagged, &completion) {
        return Ok(pass_through("completion altered the text"));
    }
    let (tree, diagnostics) = parse(&completion, first);
    Ok(Clarified {
        tagged: completion,
        tree,
        diagnostics,
        passed_through: false,
    })
}
