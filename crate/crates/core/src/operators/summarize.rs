use super::{first_sentence, OperatorContext, OperatorError};
use crate::prompts::{SUMMARIZE, SUMMARIZE_RETRY};
use crate::text::{normalize_ws, strip_tags, word_count};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummaryConfig {
    pub max_words: usize,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        SummaryConfig { max_words: 60 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Summary {
    pub text: String,
    pub truncated: bool,
    /// The provider failed; `text` is the first sentence of the subtree.
    pub fallback: bool,
}

/// Keeps the first `max` whitespace-delimited words, marking the cut with
/// a trailing ellipsis on the last kept word.
pub fn truncate_words(text: &str, max: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= max {
        return words.join(" ");
    }
    let mut out = words[..max.max(1)].join(" ");
    out.push('…');
    out
}

fn clean(completion: &str) -> String {
    normalize_ws(&strip_tags(completion))
}

/// Summarizes preorder node texts of a subtree in at most `max_words` words.
pub async fn summarize_subtree(
    ctx: &OperatorContext,
    texts: &[String],
    cfg: SummaryConfig,
) -> Result<Summary, OperatorError> {
    let max = cfg.max_words.max(1);
    let fallback = || {
        let first = texts.iter().find(|t| !t.trim().is_empty()).map_or("", String::as_str);
        Summary {
            text: truncate_words(&first_sentence(first), max),
            truncated: false,
            fallback: true,
        }
    };
    let context = texts.join("\n");
    let limit = max.to_string();
    let first = match ctx
        .call(SUMMARIZE, &[("subtree_context", &context), ("max_words", &limit)])
        .await?
    {
        Ok(c) if !c.trim().is_empty() => clean(&c),
        Ok(_) => return Ok(fallback()),
        Err(e) => {
            tracing::warn!(error = %e, "summarize failed; using first sentence");
            return Ok(fallback());
        }
    };
    if word_count(&first) <= max {
        return Ok(Summary { text: first, truncated: false, fallback: false });
    }
    let second = match ctx
        .call(
            SUMMARIZE_RETRY,
            &[("subtree_context", &context), ("max_words", &limit), ("previous", &first)],
        )
        .await?
    {
        Ok(c) if !c.trim().is_empty() => clean(&c),
        _ => first,
    };
    if word_count(&second) <= max {
        return Ok(Summary { text: second, truncated: false, fallback: false });
    }
    Ok(Summary {
        text: truncate_words(&second, max),
        truncated: true,
        fallback: false,
    })
}
