mod common;

use common::*;
use reasonweave_core::chain::{parse_tagged, NodeId, NodeKind, NodeStatus, ReasoningNode};
use reasonweave_core::engine::{EngineError, Step};
use reasonweave_core::prompts;
use reasonweave_core::providers::{Fixture, FixtureError, ProviderSet, ScriptedProvider};
use reasonweave_core::script::Command;
use reasonweave_core::session::{EventKind, PauseReason, PendingNode, Phase, Session};
use reasonweave_core::text::normalize_ws;

fn staged(tagged: &str) -> Session {
    let (tree, _) = parse_tagged(tagged);
    let mut s = fresh_session();
    fn go(n: &ReasoningNode, parent: Option<NodeId>, s: &mut Session) {
        let mut bare = n.clone();
        bare.children.clear();
        s.pending.push_back(PendingNode { parent, node: bare });
        for c in &n.children {
            go(c, Some(n.id), s);
        }
    }
    for r in &tree.roots {
        go(r, None, &mut s);
    }
    s.next_id = tree.next_id();
    s.phase = Phase::Structuring;
    s
}

fn kinds(s: &Session) -> Vec<&EventKind> {
    s.event_log.iter().map(|e| &e.kind).collect()
}

async fn golden_structured() -> (reasonweave_core::engine::Engine, Session) {
    let eng = scripted_engine(&read("fixtures.json"));
    let mut s = fresh_session();
    eng.start(&mut s).await.unwrap();
    (eng, s)
}

#[tokio::test]
async fn node_added_follows_preorder_and_loses_no_text() {
    let (eng, mut s) = golden_structured().await;
    let raw = s.raw_think.clone();
    assert_eq!(eng.run(&mut s).await.unwrap(), Step::Halted(NodeId(10)));
    assert_eq!(eng.run(&mut s).await.unwrap(), Step::Halted(NodeId(10)));
    eng.submit_feedback(&mut s, NodeId(10), None).await.unwrap();
    assert_eq!(eng.run(&mut s).await.unwrap(), Step::Complete);

    let added: Vec<NodeId> = kinds(&s)
        .into_iter()
        .filter_map(|k| match k {
            EventKind::NodeAdded { node, .. } => Some(node.id),
            _ => None,
        })
        .collect();
    assert_eq!(added, s.tree.preorder_ids());
    assert_eq!(added, (1..=10).map(NodeId).collect::<Vec<_>>());

    let emitted: Vec<String> = s.tree.preorder().iter().map(|n| n.text.clone()).collect();
    assert_eq!(normalize_ws(&emitted.join(" ")), normalize_ws(&raw));

    // Deltas rebuild each node's text exactly.
    let mut rebuilt = std::collections::BTreeMap::<NodeId, String>::new();
    for k in kinds(&s) {
        if let EventKind::NodeTextDelta { id, delta } = k {
            rebuilt.entry(*id).or_default().push_str(delta);
        }
    }
    for n in s.tree.preorder() {
        assert_eq!(rebuilt.get(&n.id).cloned().unwrap_or_default(), n.text, "node {}", n.id);
    }
    assert!(matches!(kinds(&s).last(), Some(EventKind::TreeComplete { node_count: 10 })));
    assert_eq!(s.phase, Phase::TreeReady);
}

#[tokio::test]
async fn feedback_event_order() {
    let (eng, mut s) = golden_structured().await;
    eng.run(&mut s).await.unwrap();
    let tail: Vec<_> = kinds(&s).into_iter().rev().take(2).collect();
    assert!(matches!(tail[0], EventKind::FeedbackRequired { id, .. } if *id == NodeId(10)));
    assert!(
        matches!(tail[1], EventKind::NodeCompleted { id, status } if *id == NodeId(10) && *status == NodeStatus::AwaitingFeedback)
    );
    assert_eq!(s.halted_at, Some(NodeId(10)));

    let mark = s.event_log.len();
    eng.submit_feedback(&mut s, NodeId(10), Some(FEEDBACK_ANSWER.into())).await.unwrap();
    let after: Vec<_> = s.event_log[mark..].iter().map(|e| &e.kind).collect();
    assert!(matches!(after[0], EventKind::NodeUpdated { node } if node.id == NodeId(10) && node.status == NodeStatus::Answered));
    assert!(matches!(after[1], EventKind::NodeAdded { node, parent: Some(p), index: 0 } if node.id == NodeId(11) && *p == NodeId(10)));
    assert!(matches!(after[2], EventKind::GenerationResumed { reason: PauseReason::Feedback }));
    assert_eq!(after.len(), 3);
    assert_eq!(s.halted_at, None);
}

const TWO_QUESTIONS: &str = "<topic>Plan a trip.</topic>\
<branch><user>How many days can you travel?</user></branch>\
<branch>Beaches are nice.</branch>\
<branch><user>Do you prefer warm or cold weather?</user></branch>";

#[tokio::test]
async fn feedback_nodes_halt_one_at_a_time() {
    let eng = scripted_engine("[]");
    let mut s = staged(TWO_QUESTIONS);
    assert_eq!(eng.run(&mut s).await.unwrap(), Step::Halted(NodeId(2)));
    assert!(s.tree.find(NodeId(3)).is_none(), "later nodes wait behind the halt");
    eng.set_text(&mut s, NodeId(1), "Plan a short trip.").unwrap();
    eng.submit_feedback(&mut s, NodeId(2), None).await.unwrap();
    assert_eq!(s.tree.find(NodeId(2)).unwrap().status, NodeStatus::Skipped);
    assert_eq!(eng.run(&mut s).await.unwrap(), Step::Halted(NodeId(4)));
    eng.submit_feedback(&mut s, NodeId(4), None).await.unwrap();
    assert_eq!(eng.run(&mut s).await.unwrap(), Step::Complete);
    let halts = kinds(&s).into_iter().filter(|k| matches!(k, EventKind::FeedbackRequired { .. })).count();
    assert_eq!(halts, 2);
}

#[tokio::test]
async fn repeated_question_is_demoted() {
    let eng = scripted_engine("[]");
    let mut s = staged(
        "<topic>Plan a trip.</topic>\
<branch><user>What is your budget for the trip?</user></branch>\
<branch><user>What is your budget for the trip?</user></branch>",
    );
    assert_eq!(eng.run(&mut s).await.unwrap(), Step::Halted(NodeId(2)));
    eng.submit_feedback(&mut s, NodeId(2), None).await.unwrap();
    assert_eq!(eng.run(&mut s).await.unwrap(), Step::Complete);
    let dup = s.tree.find(NodeId(3)).unwrap();
    assert_eq!(dup.kind, NodeKind::Branch);
    assert_eq!(dup.status, NodeStatus::Complete);
    assert!(!kinds(&s).iter().any(|k| matches!(k, EventKind::FeedbackRequired { id, .. } if *id == NodeId(3))));
}

#[tokio::test]
async fn generation_blocked_while_feedback_pending() {
    let eng = scripted_engine("[]");
    let mut s = staged(TWO_QUESTIONS);
    eng.run(&mut s).await.unwrap();
    s.phase = Phase::TreeReady;
    match eng.generate_answer(&mut s).await {
        Err(EngineError::FeedbackPending(ids)) => assert_eq!(ids, vec![NodeId(2)]),
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn pause_loses_nothing() {
    let fixtures = read("fixtures.json");
    let stored: Session = serde_json::from_str(&read("session.json")).unwrap();
    let plain = replay(&scripted_engine(&fixtures), &stored, &script()).await;
    let paused = replay(&scripted_engine(&fixtures), &stored, &paused_script()).await;
    let strip = |s: &Session| -> Vec<EventKind> {
        s.event_log
            .iter()
            .map(|e| e.kind.clone())
            .filter(|k| {
                !matches!(
                    k,
                    EventKind::GenerationPaused { reason: PauseReason::User }
                        | EventKind::GenerationResumed { reason: PauseReason::User }
                )
            })
            .collect()
    };
    assert_eq!(strip(&plain), strip(&paused));
    assert_eq!(plain.tree, paused.tree);
    let marks = paused.event_log.len() - plain.event_log.len();
    assert_eq!(marks, 2);
}

#[tokio::test]
async fn pause_blocks_steps_until_resume() {
    let eng = scripted_engine("[]");
    let mut s = staged("<topic>A.</topic><branch>B.</branch>");
    eng.step(&mut s).await.unwrap();
    eng.pause(&mut s).unwrap();
    eng.pause(&mut s).unwrap();
    assert_eq!(eng.step(&mut s).await.unwrap(), Step::Paused);
    assert_eq!(s.tree.node_count(), 1);
    eng.resume(&mut s).unwrap();
    assert_eq!(eng.step(&mut s).await.unwrap(), Step::Emitted(NodeId(2)));
    let pauses = kinds(&s).into_iter().filter(|k| matches!(k, EventKind::GenerationPaused { .. })).count();
    assert_eq!(pauses, 1);
}

#[tokio::test]
async fn answer_prompt_is_exact() {
    let eng = scripted_engine("[]");
    let mut s = staged("<topic>Consider beaches.</topic><branch>Cancun is warm.</branch><branch><user>What is your budget?</user></branch>");
    eng.run(&mut s).await.unwrap();
    eng.set_text(&mut s, NodeId(2), "Cancun is warm in March.").unwrap();
    let expected = "Where should I go for spring break?\n<think>\nConsider beaches.\n\nCancun is warm in March.\n\nWhat is your budget?\n</think>\n<answer>";
    assert_eq!(eng.answer_prompt(&s), expected);
}

#[tokio::test]
async fn missing_link_fixture_fails_and_restores_phase() {
    let eng = scripted_engine("[]");
    let mut s = staged("<topic>Consider beaches.</topic><branch>Cancun is warm.</branch>");
    eng.run(&mut s).await.unwrap();
    let prompt = eng.answer_prompt(&s);
    let p = ScriptedProvider::new(vec![
        Fixture::new(prompts::REASON, &prompt, "Go to Cancun.</answer>"),
        Fixture::new(prompts::REASON, &prompt, "Try Tulum instead.</answer>"),
    ]);
    let eng = engine(ProviderSet::scripted(p));
    // No link fixture: drift is a hard failure, not an unavailable link map.
    let err = eng.generate_answer(&mut s).await.unwrap_err();
    assert!(matches!(err, EngineError::Fixture(FixtureError::Exhausted { ref template_id }) if template_id == prompts::LINK));
    assert_eq!(s.phase, Phase::TreeReady, "failed answer restores the phase");
    assert_eq!(s.answer, None);
}

#[tokio::test]
async fn second_answer_replaces_first() {
    let oracle = std::sync::Arc::new(Oracle::new());
    let (eng, mut s) = golden_structured().await;
    drop(eng);
    let eng = engine(ProviderSet {
        reasoning: std::sync::Arc::new(Flip::default()),
        operator: oracle,
        embedding: std::sync::Arc::new(reasonweave_core::providers::HashEmbedder::default()),
    });
    eng.run(&mut s).await.unwrap();
    eng.submit_feedback(&mut s, NodeId(10), None).await.unwrap();
    eng.run(&mut s).await.unwrap();
    eng.generate_answer(&mut s).await.unwrap();
    assert_eq!(s.answer.as_deref(), Some(FIRST));
    let premises = |s: &Session| -> Vec<NodeId> {
        s.links.as_ref().unwrap().edges.iter().map(|e| e.premise_id).collect()
    };
    assert_eq!(premises(&s), vec![NodeId(7), NodeId(9)]);
    eng.delete(&mut s, NodeId(9)).unwrap();
    eng.apply(&mut s, &Command::GenerateAnswer).await.unwrap();
    assert_eq!(s.answer.as_deref(), Some(SECOND));
    assert_eq!(premises(&s), vec![NodeId(7)], "links to the deleted node are gone");
    assert_eq!(s.phase, Phase::Answered);
    let completes = kinds(&s).into_iter().filter(|k| matches!(k, EventKind::AnswerComplete { .. })).count();
    assert_eq!(completes, 2);
}

const FIRST: &str = "Cancun is lively. Costa Rica is green. Kyoto has blossoms.";
const SECOND: &str = "Cancun is cheap. Costa Rica has zip-lines. Skip the cities.";

/// Alternates between two answers.
#[derive(Default)]
struct Flip(std::sync::atomic::AtomicUsize);

#[async_trait::async_trait]
impl reasonweave_core::providers::ReasoningProvider for Flip {
    async fn reason(&self, _: &str) -> Result<reasonweave_core::providers::ReasonStream, reasonweave_core::providers::ProviderError> {
        use reasonweave_core::providers::{Channel, ReasonChunk, ReasonStreamEvent};
        let n = self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        let text = if n == 0 { FIRST } else { SECOND };
        let items = vec![
            Ok(ReasonChunk::Delta(ReasonStreamEvent { channel: Channel::Answer, delta: text.into() })),
            Ok(ReasonChunk::Done(None)),
        ];
        Ok(Box::pin(futures::stream::iter(items)))
    }
}

#[tokio::test]
async fn interrupted_reasoning_freezes_with_prefix() {
    let chain = read("chain.txt");
    let full = format!("<think>\n{chain}\n</think>\n\nanswer");
    let p = ScriptedProvider::new(vec![Fixture::interrupted(prompts::REASON, QUERY, &full, 60)]);
    let eng = engine(ProviderSet::scripted(p));
    let mut s = fresh_session();
    let err = eng.start(&mut s).await.unwrap_err();
    assert!(matches!(err, EngineError::Provider(_)), "{err:?}");
    assert_eq!(s.phase, Phase::Reasoning);
    assert!(!s.raw_think.is_empty());
    assert!(chain.starts_with(s.raw_think.trim_start()), "{:?}", s.raw_think);
    assert!(matches!(kinds(&s).last(), Some(EventKind::Error { code, .. }) if code == "ProviderFailure"));
}

#[tokio::test]
async fn regenerate_keeps_children() {
    let (tree, _) = parse_tagged("<topic>Options.</topic><branch>Quiet beaches.<branch>Costa Rica.</branch><branch>Hawaii.</branch></branch>");
    let mut s = fresh_session();
    s.tree = tree.clone();
    s.next_id = tree.next_id();
    s.phase = Phase::TreeReady;
    let eng = engine(ProviderSet {
        reasoning: std::sync::Arc::new(Oracle::new()),
        operator: std::sync::Arc::new(Oracle::new()),
        embedding: std::sync::Arc::new(reasonweave_core::providers::HashEmbedder::default()),
    });
    eng.regenerate(&mut s, NodeId(2)).await.unwrap();
    let n = s.tree.find(NodeId(2)).unwrap();
    assert_eq!(n.text, REGENERATED);
    let before: Vec<_> = tree.find(NodeId(2)).unwrap().children.clone();
    assert_eq!(n.children, before);
    assert!(matches!(
        eng.regenerate(&mut s, NodeId(99)).await,
        Err(EngineError::UnknownId(NodeId(99)))
    ));
}

#[tokio::test]
async fn deleting_a_node_drops_its_pending_subtree() {
    let eng = scripted_engine("[]");
    let mut s = staged("<topic>A.</topic><branch>B.<branch>C.<branch>D.</branch></branch></branch><branch>E.</branch>");
    eng.step(&mut s).await.unwrap();
    eng.step(&mut s).await.unwrap();
    eng.delete(&mut s, NodeId(2)).unwrap();
    assert_eq!(eng.run(&mut s).await.unwrap(), Step::Complete);
    assert_eq!(s.tree.preorder_ids(), vec![NodeId(1), NodeId(5)]);
    assert!(s.tree.validate().is_ok());
}

#[tokio::test]
async fn deleting_the_halted_question_resumes() {
    let eng = scripted_engine("[]");
    let mut s = staged(TWO_QUESTIONS);
    eng.run(&mut s).await.unwrap();
    eng.delete(&mut s, NodeId(2)).unwrap();
    assert_eq!(s.halted_at, None);
    assert!(matches!(kinds(&s).last(), Some(EventKind::GenerationResumed { reason: PauseReason::Feedback })));
    assert_eq!(eng.run(&mut s).await.unwrap(), Step::Halted(NodeId(4)));
}

#[tokio::test]
async fn fixture_drift_is_not_absorbed() {
    let p = ScriptedProvider::new(vec![Fixture::new(prompts::FOLLOW_UP, "some other prompt", "x")]);
    let eng = engine(ProviderSet::scripted(p));
    let mut s = staged(TWO_QUESTIONS);
    eng.run(&mut s).await.unwrap();
    let err = eng.submit_feedback(&mut s, NodeId(2), Some("Five days.".into())).await.unwrap_err();
    match err {
        EngineError::Fixture(FixtureError::DigestMismatch { template_id, .. }) => {
            assert_eq!(template_id, prompts::FOLLOW_UP)
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(err_code(&s), None);
}

fn err_code(s: &Session) -> Option<String> {
    s.event_log.iter().rev().find_map(|e| match &e.kind {
        EventKind::Error { code, .. } => Some(code.clone()),
        _ => None,
    })
}

#[tokio::test]
async fn edits_are_rejected_before_structuring() {
    let eng = scripted_engine("[]");
    let mut s = fresh_session();
    assert!(matches!(
        eng.set_text(&mut s, NodeId(1), "x"),
        Err(EngineError::InvalidPhase { .. })
    ));
    assert!(matches!(eng.pause(&mut s), Err(EngineError::InvalidPhase { .. })));
    assert!(eng.create_session("   ").is_err());
}

#[tokio::test]
async fn staged_tree_matches_the_revealed_tree() {
    let (eng, mut s) = golden_structured().await;
    let staged = s.staged_tree();
    assert_eq!(staged.node_count(), 10);
    assert!(staged.validate().is_ok());
    eng.run(&mut s).await.unwrap();
    eng.submit_feedback(&mut s, NodeId(10), None).await.unwrap();
    eng.run(&mut s).await.unwrap();
    assert!(staged.shape_eq(&s.tree));
}

#[tokio::test]
async fn recorded_chain_structures_without_reasoning_call() {
    let fixtures: Vec<Fixture> = serde_json::from_str(&read("fixtures.json")).unwrap();
    let without_reason: Vec<Fixture> = fixtures.into_iter().filter(|f| f.matches.template_id != prompts::REASON).collect();
    let eng = engine(ProviderSet::scripted(ScriptedProvider::new(without_reason)));
    let mut s = fresh_session();
    let chain = read("chain.txt");
    eng.start_from_chain(&mut s, chain.trim()).await.unwrap();
    assert_eq!(s.phase, Phase::Structuring);
    let tree = s.staged_tree();
    assert_eq!(tree.find(NodeId(10)).unwrap().kind, NodeKind::Feedback);
}
