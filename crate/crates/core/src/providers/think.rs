use super::{Channel, ReasonStreamEvent};

const OPEN: &str = "<think>";
const CLOSE: &str = "</think>";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum State {
    /// Nothing but whitespace seen so far.
    Start,
    Think,
    Answer,
}

/// Demultiplexes a raw completion stream into think and answer deltas.
///
/// A think section is recognized only at the start of the completion
/// (after leading whitespace). At most `len("</think>") - 1` characters are
/// held back per chunk while a delimiter may be forming.
#[derive(Clone, Debug)]
pub struct ThinkSplitter {
    state: State,
    pending: String,
}

impl Default for ThinkSplitter {
    fn default() -> Self {
        Self::new()
    }
}

impl ThinkSplitter {
    pub fn new() -> Self {
        ThinkSplitter {
            state: State::Start,
            pending: String::new(),
        }
    }

    pub fn push(&mut self, chunk: &str) -> Vec<ReasonStreamEvent> {
        self.pending.push_str(chunk);
        let mut out = Vec::new();
        loop {
            match self.state {
                State::Start => {
                    let trimmed = self.pending.trim_start();
                    if trimmed.is_empty() {
                        break;
                    }
                    if let Some(rest) = trimmed.strip_prefix(OPEN) {
                        self.pending = rest.to_string();
                        self.state = State::Think;
                    } else if OPEN.starts_with(trimmed) {
                        break;
                    } else {
                        self.state = State::Answer;
                    }
                }
                State::Think => {
                    if let Some(pos) = self.pending.find(CLOSE) {
                        let think = self.pending[..pos].to_string();
                        emit(&mut out, Channel::Think, think);
                        self.pending.drain(..pos + CLOSE.len());
                        self.state = State::Answer;
                        continue;
                    }
                    let hold = (1..CLOSE.len())
                        .rev()
                        .find(|&k| self.pending.ends_with(&CLOSE[..k]))
                        .unwrap_or(0);
                    let cut = self.pending.len() - hold;
                    let think: String = self.pending.drain(..cut).collect();
                    emit(&mut out, Channel::Think, think);
                    break;
                }
                State::Answer => {
                    let answer = std::mem::take(&mut self.pending);
                    emit(&mut out, Channel::Answer, answer);
                    break;
                }
            }
        }
        out
    }

    /// Flushes held-back characters at end of stream.
    pub fn finish(&mut self) -> Vec<ReasonStreamEvent> {
        let mut out = Vec::new();
        let rest = std::mem::take(&mut self.pending);
        let channel = match self.state {
            State::Think => Channel::Think,
            State::Start | State::Answer => Channel::Answer,
        };
        emit(&mut out, channel, rest);
        out
    }

    pub fn in_answer(&self) -> bool {
        self.state == State::Answer
    }
}

fn emit(out: &mut Vec<ReasonStreamEvent>, channel: Channel, delta: String) {
    if !delta.is_empty() {
        out.push(ReasonStreamEvent { channel, delta });
    }
}

/// Whole-string split into `(think, answer)`.
pub fn split_think(s: &str) -> (&str, &str) {
    let t = s.trim_start();
    match t.strip_prefix(OPEN) {
        Some(rest) => match rest.find(CLOSE) {
            Some(i) => (&rest[..i], &rest[i + CLOSE.len()..]),
            None => (rest, ""),
        },
        None => ("", s),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(chunks: &[&str]) -> (String, String, usize) {
        let mut s = ThinkSplitter::new();
        let mut evs = Vec::new();
        for c in chunks {
            evs.extend(s.push(c));
        }
        evs.extend(s.finish());
        let mut think = String::new();
        let mut answer = String::new();
        let mut seen_answer = false;
        let mut think_events = 0;
        for e in evs {
            match e.channel {
                Channel::Think => {
                    assert!(!seen_answer, "think after answer");
                    think_events += 1;
                    think.push_str(&e.delta)
                }
                Channel::Answer => {
                    seen_answer = true;
                    answer.push_str(&e.delta)
                }
            }
        }
        (think, answer, think_events)
    }

    fn chunk(s: &str, n: usize) -> Vec<String> {
        let chars: Vec<char> = s.chars().collect();
        chars.chunks(n).map(|c| c.iter().collect()).collect()
    }

    #[test]
    fn two_char_chunks() {
        let parts = chunk("<think>abc</think>xyz", 2);
        let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
        let (t, a, _) = run(&refs);
        assert_eq!((t.as_str(), a.as_str()), ("abc", "xyz"));
    }

    #[test]
    fn no_think_section() {
        let (t, a, n) = run(&["Just ", "an answer."]);
        assert_eq!(n, 0);
        assert_eq!(t, "");
        assert_eq!(a, "Just an answer.");
    }

    #[test]
    fn split_open_delimiter() {
        let (t, a, _) = run(&["<thi", "nk>deep</th", "ink>done"]);
        assert_eq!((t.as_str(), a.as_str()), ("deep", "done"));
    }

    #[test]
    fn holdback_is_bounded() {
        let mut s = ThinkSplitter::new();
        s.push("<think>");
        let evs = s.push("abcdef</thin");
        assert_eq!(evs[0].delta, "abcdef");
        assert!(s.pending.len() < CLOSE.len());
    }

    proptest! {
        #[test]
        fn any_chunking_matches_whole_split(
            think in "[a-z <>/]{0,30}",
            answer in "[a-z <>/]{0,30}",
            lead in "[ \n]{0,3}",
            with_think in any::<bool>(),
            closed in any::<bool>(),
            sizes in proptest::collection::vec(1usize..6, 1..40),
        ) {
            let think = think.replace("</think>", "");
            let whole = if with_think {
                if closed { format!("{lead}<think>{think}</think>{answer}") } else { format!("{lead}<think>{think}") }
            } else {
                format!("{lead}{answer}")
            };
            let chars: Vec<char> = whole.chars().collect();
            let mut parts = Vec::new();
            let mut i = 0;
            let mut k = 0;
            while i < chars.len() {
                let n = sizes[k % sizes.len()];
                k += 1;
                let end = (i + n).min(chars.len());
                parts.push(chars[i..end].iter().collect::<String>());
                i = end;
            }
            let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
            let (t, a, _) = run(&refs);
            let (et, ea) = split_think(&whole);
            prop_assert_eq!(t.as_str(), et);
            prop_assert_eq!(a.as_str(), ea);
        }
    }
}
