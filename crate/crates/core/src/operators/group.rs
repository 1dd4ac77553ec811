use super::{OperatorContext, OperatorError};
use crate::prompts::GROUP;
use crate::text::token_lcs_ratio;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupConfig {
    pub max_segments: usize,
    /// Minimum token-LCS ratio for accepting the model's division.
    pub preservation_floor: f64,
}

impl Default for GroupConfig {
    fn default() -> Self {
        GroupConfig {
            max_segments: 8,
            preservation_floor: 0.85,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub segments: Vec<String>,
    pub preservation_score: f64,
    /// True when the deterministic split replaced the model's output.
    pub degraded: bool,
}

/// Blank-line separated paragraphs, trimmed, empties dropped.
pub fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                out.push(cur.join("\n").trim().to_string());
                cur.clear();
            }
        } else {
            cur.push(line);
        }
    }
    if !cur.is_empty() {
        out.push(cur.join("\n").trim().to_string());
    }
    out
}

/// Paragraph split of the raw input, merging the shortest adjacent pair
/// until at most `max_segments` remain.
pub fn fallback_split(raw: &str, max_segments: usize) -> Vec<String> {
    let mut parts = paragraphs(raw);
    if parts.is_empty() {
        return vec![raw.to_string()];
    }
    let max = max_segments.max(1);
    while parts.len() > max {
        let (best, _) = parts
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i, w[0].chars().count() + w[1].chars().count()))
            .min_by_key(|(i, len)| (*len, *i))
            .expect("at least two parts");
        let right = parts.remove(best + 1);
        let left = &mut parts[best];
        left.push_str("\n\n");
        left.push_str(&right);
    }
    parts
}

/// Newline runs become a single space so words on either side stay apart.
fn flatten_newlines(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_run = false;
    for c in s.chars() {
        if c == '\n' || c == '\r' {
            if !in_run {
                out.push(' ');
            }
            in_run = true;
        } else {
            out.push(c);
            in_run = false;
        }
    }
    out
}

/// Divides a raw reasoning chain into topical segments.
pub async fn group_thoughts(
    ctx: &OperatorContext,
    raw: &str,
    query: &str,
    cfg: GroupConfig,
) -> Result<SegmentationResult, OperatorError> {
    if paragraphs(raw).len() <= 1 {
        return Ok(SegmentationResult {
            segments: vec![raw.to_string()],
            preservation_score: 1.0,
            degraded: false,
        });
    }
    let fallback = |why: &str| {
        tracing::warn!(reason = why, "group_thoughts falling back to paragraph split");
        let segments = fallback_split(raw, cfg.max_segments);
        SegmentationResult {
            preservation_score: token_lcs_ratio(raw, &segments.join("\n\n")),
            segments,
            degraded: true,
        }
    };
    let max = cfg.max_segments.to_string();
    let flat = flatten_newlines(raw);
    let completion = match ctx
        .call(GROUP, &[("query", query), ("reasoning", &flat), ("max_segments", &max)])
        .await?
    {
        Ok(c) => c,
        Err(e) => return Ok(fallback(&e.to_string())),
    };
    let segments = paragraphs(&completion);
    if segments.is_empty() {
        return Ok(fallback("empty completion"));
    }
    if segments.len() > cfg.max_segments {
        return Ok(fallback("too many segments"));
    }
    let score = token_lcs_ratio(raw, &segments.join("\n\n"));
    if score < cfg.preservation_floor {
        return Ok(fallback("preservation below floor"));
    }
    Ok(SegmentationResult {
        segments,
        preservation_score: score,
        degraded: false,
    })
}
