//! The spring-break scenario: a canned model oracle, the command script and
//! helpers to build engines over recorded or scripted providers.
#![allow(dead_code)]

use async_trait::async_trait;
use reasonweave_core::chain::NodeId;
use reasonweave_core::engine::{Engine, EngineConfig};
use reasonweave_core::prompts::{self, PromptCatalog};
use reasonweave_core::providers::{
    HashEmbedder, OperatorProvider, ProviderError, ProviderSet, ReasonChunk, ReasonStream,
    ReasoningProvider, RecordingProvider, RetryPolicy, ScriptedProvider, ThinkSplitter,
};
use reasonweave_core::script::Command;
use reasonweave_core::session::{Session, SessionId};
use std::path::PathBuf;
use std::sync::Arc;

pub const QUERY: &str = "Where should I go for spring break?";
pub const INITIAL_ANSWER: &str =
    "Popular picks include Cancun and Miami for beaches, Costa Rica for nature, and Kyoto for culture.";
pub const FEEDBACK_ANSWER: &str = "Under $1500 for a week, flying from Chicago.";
pub const FOLLOW_UP: &str =
    "With about $1500, Cancun and Costa Rica fit best since flights from Chicago and stays there are affordable in March.";
pub const BRANCH_PROMPT: &str = "Suggest cheaper beach towns in Mexico.";
pub const BRANCH_TEXT: &str =
    "Beyond Cancun, Tulum and Playa del Carmen offer quieter beaches at lower prices.";
pub const EDITED_TEXT: &str = "These spots draw crowds because of warm weather and nightlife.";
pub const REGENERATED: &str =
    "Costa Rica is a good fit for eco-tourism, with rainforests and zip-lining at a moderate cost.";
pub const SUMMARY: &str = "Quieter beach options include Costa Rica and Hawaii.";
pub const FINAL_ANSWER: &str = "Cancun fits a $1500 budget with cheap flights from Chicago and lively beaches. \
Costa Rica suits travelers who want rainforests and zip-lining. \
Kyoto is worth the trip in spring for the cherry blossoms.";
pub const LINKS: &str = r#"[
  {"hypothesis_id": 1, "entailing_premise": {"premise_id": 11, "entailment_strength": 0.91}},
  {"hypothesis_id": 2, "entailing_premise": {"premise_id": 7, "entailment_strength": 0.87}},
  {"hypothesis_id": 3, "entailing_premise": {"premise_id": 9, "entailment_strength": 0.83}}
]"#;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/spring_break")
}

pub fn read(name: &str) -> String {
    std::fs::read_to_string(fixture_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn tail_from_second_topic(s: &str) -> String {
    let first = s.find("<topic>").expect("first topic");
    let second = s[first + 1..].find("<topic>").expect("second topic") + first + 1;
    s[second..].trim().to_string()
}

/// Stands in for the live models: answers each template deterministically.
pub struct Oracle {
    chain: String,
    structured_tail: String,
    clarified_tail: String,
}

impl Oracle {
    pub fn new() -> Self {
        Oracle {
            chain: read("chain.txt").trim().to_string(),
            structured_tail: tail_from_second_topic(&read("structured.txt")),
            clarified_tail: tail_from_second_topic(&read("clarified.txt")),
        }
    }

    fn paragraphs(&self) -> Vec<&str> {
        self.chain.split("\n\n").collect()
    }

    fn answer(&self, template: &str, prompt: &str) -> String {
        let paras = self.paragraphs();
        match template {
            prompts::GROUP => format!("{}\n\n{}", paras[0], paras[1..].join("\n")),
            prompts::STRUCTURE => {
                if prompt.trim_end().ends_with(paras[0]) {
                    format!("<topic>\n{}\n</topic>", paras[0])
                } else {
                    self.structured_tail.clone()
                }
            }
            prompts::CLARIFY => {
                let marker = "every character preserved:\n";
                let input = &prompt[prompt.rfind(marker).expect("clarify marker") + marker.len()..];
                if input.trim() == self.structured_tail {
                    self.clarified_tail.clone()
                } else {
                    input.to_string()
                }
            }
            prompts::FOLLOW_UP => FOLLOW_UP.into(),
            prompts::BRANCH => BRANCH_TEXT.into(),
            prompts::REGENERATE => REGENERATED.into(),
            prompts::SUMMARIZE => SUMMARY.into(),
            prompts::LINK => LINKS.into(),
            other => panic!("oracle has no answer for {other}"),
        }
    }
}

#[async_trait]
impl OperatorProvider for Oracle {
    async fn complete(&self, template_id: &str, prompt: &str) -> Result<String, ProviderError> {
        Ok(self.answer(template_id, prompt))
    }
}

#[async_trait]
impl ReasoningProvider for Oracle {
    async fn reason(&self, prompt: &str) -> Result<ReasonStream, ProviderError> {
        let text = if prompt == QUERY {
            format!("<think>\n{}\n</think>\n\n{INITIAL_ANSWER}", self.chain)
        } else {
            format!("{FINAL_ANSWER}</answer>")
        };
        let mut sp = ThinkSplitter::new();
        let mut items: Vec<_> = sp.push(&text);
        items.extend(sp.finish());
        let mut items: Vec<Result<ReasonChunk, ProviderError>> =
            items.into_iter().map(|e| Ok(ReasonChunk::Delta(e))).collect();
        items.push(Ok(ReasonChunk::Done(None)));
        Ok(Box::pin(futures::stream::iter(items)))
    }
}

/// The edit script applied after structuring.
pub fn script() -> Vec<Command> {
    vec![
        Command::Run,
        Command::Feedback { id: NodeId(10), answer: Some(FEEDBACK_ANSWER.into()) },
        Command::Run,
        Command::SetText { id: NodeId(5), text: EDITED_TEXT.into() },
        Command::BranchOut { id: NodeId(4), prompt: BRANCH_PROMPT.into() },
        Command::Regenerate { id: NodeId(7) },
        Command::Collapse { id: NodeId(6) },
        Command::GenerateAnswer,
    ]
}

/// The same script, with a pause/resume in the middle of emission.
pub fn paused_script() -> Vec<Command> {
    let mut s = vec![
        Command::Step { count: 3 },
        Command::Pause,
        Command::Step { count: 1 },
        Command::Resume,
    ];
    s.extend(script());
    s
}

pub fn config() -> EngineConfig {
    EngineConfig {
        retry: RetryPolicy::immediate(),
        ..EngineConfig::default()
    }
}

pub fn engine(providers: ProviderSet) -> Engine {
    Engine::new(providers, Arc::new(PromptCatalog::bundled()), config())
}

pub fn scripted_engine(fixtures: &str) -> Engine {
    let p: ScriptedProvider = ScriptedProvider::new(serde_json::from_str(fixtures).expect("fixtures"));
    engine(ProviderSet::scripted(p))
}

pub fn fresh_session() -> Session {
    Session::new(SessionId::parse("spring-break").unwrap(), QUERY.into())
}

/// Runs the full scenario against the oracle, recording every model call.
pub async fn record() -> (Session, Session, RecordingProvider) {
    let oracle = Arc::new(Oracle::new());
    let rec = Arc::new(RecordingProvider::new(oracle.clone(), oracle));
    let eng = engine(ProviderSet {
        reasoning: rec.clone(),
        operator: rec.clone(),
        embedding: Arc::new(HashEmbedder::default()),
    });
    let mut s = fresh_session();
    eng.start(&mut s).await.expect("start");
    let structured = s.clone();
    for cmd in script() {
        eng.apply(&mut s, &cmd).await.unwrap_or_else(|e| panic!("{cmd:?}: {e}"));
    }
    drop(eng);
    let rec = Arc::try_unwrap(rec).ok().expect("sole owner");
    (structured, s, rec)
}

pub async fn replay(eng: &Engine, start: &Session, cmds: &[Command]) -> Session {
    let mut s = start.clone();
    for cmd in cmds {
        eng.apply(&mut s, cmd).await.unwrap_or_else(|e| panic!("{cmd:?}: {e}"));
    }
    s
}
