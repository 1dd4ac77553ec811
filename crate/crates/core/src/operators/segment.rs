use serde::{Deserialize, Serialize};

/// One sentence of a model answer, addressable by the linker.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerUnit {
    pub id: u64,
    pub text: String,
}

/// Lowercased tokens ending in a period that never end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "etc.", "vs.", "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.",
    "no.", "approx.", "cf.", "al.", "fig.", "inc.", "ltd.", "co.", "u.s.", "a.m.", "p.m.",
];

fn closes(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '”' | '’' | '*' | '_')
}

fn opens(c: char) -> bool {
    c.is_uppercase()
        || c.is_ascii_digit()
        || matches!(c, '"' | '\'' | '(' | '[' | '“' | '‘' | '*' | '#' | '-' | '_')
}

fn starts_list_item(line: &str) -> bool {
    let l = line.trim_start();
    if l.starts_with("- ") || l.starts_with("* ") || l.starts_with("• ") || l.starts_with('#') {
        return true;
    }
    let digits = l.chars().take_while(char::is_ascii_digit).count();
    digits > 0 && matches!(l[digits..].chars().next(), Some('.' | ')'))
}

/// Whether the period-terminated word ending at `end` (exclusive) is an
/// abbreviation or a bare list enumerator such as `2.`.
fn protected(text: &str, end: usize) -> bool {
    let start = text[..end]
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_whitespace() || matches!(c, '(' | '"' | '“'))
        .map_or(0, |(i, c)| i + c.len_utf8());
    let word = text[start..end].to_lowercase();
    if ABBREVIATIONS.contains(&word.as_str()) {
        return true;
    }
    let digits = word.trim_end_matches('.');
    word.ends_with('.') && !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit())
}

/// Rule-based sentence splitter. A boundary is terminal punctuation, any
/// closing quotes or brackets, whitespace, then an uppercase letter, digit
/// or opening character. Blank lines and line breaks before list items
/// always split. Units are trimmed; ids run from 1.
pub fn segment_answer(answer: &str) -> Vec<AnswerUnit> {
    let chars: Vec<(usize, char)> = answer.char_indices().collect();
    let mut cuts = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (at, c) = chars[i];
        if c == '\n' {
            // Find the end of this whitespace run and whether it spans a blank line.
            let mut j = i;
            let mut newlines = 0;
            while j < chars.len() && chars[j].1.is_whitespace() {
                newlines += usize::from(chars[j].1 == '\n');
                j += 1;
            }
            let next_line = chars.get(j).map_or("", |(p, _)| &answer[*p..]);
            if j < chars.len() && (newlines >= 2 || starts_list_item(next_line)) {
                cuts.push(at);
            }
            i = j;
            continue;
        }
        if matches!(c, '.' | '!' | '?' | '…') {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, '.' | '!' | '?') {
                j += 1;
            }
            while j < chars.len() && closes(chars[j].1) {
                j += 1;
            }
            let end = chars.get(j).map_or(answer.len(), |(p, _)| *p);
            let mut k = j;
            while k < chars.len() && chars[k].1.is_whitespace() && chars[k].1 != '\n' {
                k += 1;
            }
            let is_boundary = k > j
                && k < chars.len()
                && (chars[k].1 == '\n' || opens(chars[k].1))
                && !(c == '.' && j == i + 1 && protected(answer, end));
            if is_boundary && chars[k].1 != '\n' {
                cuts.push(end);
            }
            i = j;
            continue;
        }
        i += 1;
    }
    let mut units = Vec::new();
    let mut start = 0;
    for cut in cuts.into_iter().chain([answer.len()]) {
        let piece = answer[start..cut].trim();
        if !piece.is_empty() {
            units.push(AnswerUnit {
                id: units.len() as u64 + 1,
                text: piece.to_string(),
            });
        }
        start = cut;
    }
    units
}

/// The first sentence of `text`, or the trimmed text if it has none.
pub fn first_sentence(text: &str) -> String {
    segment_answer(text)
        .into_iter()
        .next()
        .map(|u| u.text)
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::normalize_ws;
    use proptest::prelude::*;

    fn texts(s: &str) -> Vec<String> {
        segment_answer(s).into_iter().map(|u| u.text).collect()
    }

    #[test]
    fn punctuation_splits() {
        assert_eq!(texts("A. B! C?"), ["A.", "B!", "C?"]);
        let ids: Vec<u64> = segment_answer("A. B! C?").iter().map(|u| u.id).collect();
        assert_eq!(ids, [1, 2, 3]);
    }

    #[test]
    fn abbreviations_do_not_split() {
        assert_eq!(
            texts("Pick cheap places, e.g. Budget hostels. Then book."),
            ["Pick cheap places, e.g. Budget hostels.", "Then book."]
        );
        assert_eq!(texts("Ask Dr. Smith first."), ["Ask Dr. Smith first."]);
    }

    #[test]
    fn single_sentence_is_whole_answer() {
        assert_eq!(texts("Go to Cancun"), ["Go to Cancun"]);
        assert_eq!(texts("  Go to Cancun.  "), ["Go to Cancun."]);
    }

    #[test]
    fn lists_and_paragraphs() {
        let a = "Options:\n1. Cancun is warm.\n2. Miami is close.\n\nPick one";
        assert_eq!(
            texts(a),
            ["Options:", "1. Cancun is warm.", "2. Miami is close.", "Pick one"]
        );
    }

    #[test]
    fn lowercase_continuation_is_not_a_boundary() {
        assert_eq!(texts("It costs 3.5 dollars. ok then"), ["It costs 3.5 dollars. ok then"]);
    }

    proptest! {
        #[test]
        fn units_cover_answer(s in "[A-Za-z .!?\n,e]{0,80}") {
            let units = segment_answer(&s);
            let joined: Vec<String> = units.iter().map(|u| u.text.clone()).collect();
            prop_assert_eq!(normalize_ws(&joined.join(" ")), normalize_ws(&s));
            for (i, u) in units.iter().enumerate() {
                prop_assert_eq!(u.id, i as u64 + 1);
            }
        }
    }
}
