//! Whitespace normalization, tag stripping and token-overlap helpers shared by
//! the parser, the operators and their validators.

/// The six tag tokens recognized in structured reasoning text. Matching is
/// case-sensitive and attributes are not supported.
pub const TAG_TOKENS: [&str; 6] = [
    "<topic>", "</topic>", "<branch>", "</branch>", "<user>", "</user>",
];

/// Collapses runs of whitespace to a single space and trims both ends.
pub fn normalize_ws(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Replaces every tag token with a single space. Other angle-bracket text is
/// left untouched.
pub fn strip_tags(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('<') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        match TAG_TOKENS.iter().find(|t| tail.starts_with(**t)) {
            Some(tag) => {
                out.push(' ');
                rest = &tail[tag.len()..];
            }
            None => {
                out.push('<');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// True when `a` and `b` carry the same text once tags are removed and
/// whitespace is normalized.
pub fn same_text_ignoring_tags(a: &str, b: &str) -> bool {
    normalize_ws(&strip_tags(a)) == normalize_ws(&strip_tags(b))
}

/// Whitespace-delimited token count.
pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Longest-common-subsequence length over whitespace tokens, divided by the
/// reference token count. An empty reference scores 1.0.
pub fn token_lcs_ratio(reference: &str, candidate: &str) -> f64 {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let c: Vec<&str> = candidate.split_whitespace().collect();
    if r.is_empty() {
        return 1.0;
    }
    if c.is_empty() {
        return 0.0;
    }
    // Two rolling rows; chains run to a few thousand tokens.
    let mut prev = vec![0u32; c.len() + 1];
    let mut cur = vec![0u32; c.len() + 1];
    for rt in &r {
        for (j, ct) in c.iter().enumerate() {
            cur[j + 1] = if rt == ct {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[c.len()] as f64 / r.len() as f64
}
