mod common;

use std::sync::atomic::{AtomicUsize, Ordering};

use common::{agent, config, script, wiki_task};
use treeplan::env::EnvKind;
use treeplan::llm::{ChatBackend, ChatRequest, ChatResponse, GatewayError, Phase, ReplayBackend, ScriptEntry};
use treeplan::orchestrator::{run_master_with, RunError};
use treeplan::trace::{EventKind, TraceDocument};
use treeplan::AnswerSource;

fn replay(entries: Vec<Vec<ScriptEntry>>) -> ReplayBackend {
    ReplayBackend::new(entries.into_iter().flatten().collect())
}

#[test]
fn comedienne_run_nodes() {
    let backend = script("comedienne.json");
    let result = run_master_with(&wiki_task("dawn-french"), &config(EnvKind::WikiQa, "comedienne.json"), &backend).unwrap();
    let nodes = &result.trace.nodes;
    assert_eq!(nodes.len(), 7);
    assert_eq!(nodes[0].context.action, "Search[Dawn French's Girls Who Do Comedy]");
    assert_eq!((nodes[0].stats.r0, nodes[0].stats.c0), (0.3, 0.9));
    assert!(nodes[0].context.observation.contains("Whoopi Goldberg"));
    assert!(nodes[0].context.observation.contains("Joan Rivers"));
    assert_eq!(nodes[3].context.action, "Finish[Whoopi Goldberg]");
    assert_eq!(nodes[3].passed, Some(false));
    assert_eq!(nodes[6].passed, Some(true));
    assert_eq!(nodes[6].parent, Some(2));
    assert_eq!(nodes[1].stats.n, 1);
    assert_eq!(nodes[1].stats.reward_sum, 0.2);
    assert_eq!(nodes[0].stats.n, 1);
    assert_eq!(result.answer, "Joan Rivers");
    assert_eq!(result.source, AnswerSource::EarlyTermination);
    assert_eq!(result.ledger.calls(), 23);
    assert_eq!(result.transcript.len(), 23);
    assert!(result.trace.incidents.is_empty());
}

#[test]
fn prompts_carry_the_path_and_phase_temperatures() {
    let backend = script("comedienne.json");
    let result = run_master_with(&wiki_task("dawn-french"), &config(EnvKind::WikiQa, "comedienne.json"), &backend).unwrap();
    for call in &result.transcript {
        let expected = if call.request.phase == Phase::ThoughtAction { 0.6 } else { 0.0 };
        assert_eq!(call.request.temperature, expected);
    }
    let last_eval = result.transcript.last().unwrap();
    assert_eq!(last_eval.request.phase, Phase::Evaluation);
    let prompt = last_eval.request.prompt_text();
    assert!(prompt.contains("### Agent at depth 0"));
    assert!(prompt.contains("### Agent at depth 1"));
    assert!(prompt.contains("Search[American comedienne]"));
    assert!(prompt.contains("Action: Finish[Joan Rivers]"));
    assert!(!prompt.contains("Search[Whoopi Goldberg]"));
}

#[test]
fn fallback_picks_best_failed_terminal() {
    let backend = script("fallback.json");
    let task = wiki_task("hillary-mountain");
    let result = run_master_with(&task, &config(EnvKind::WikiQa, "fallback.json"), &backend).unwrap();
    assert_eq!(result.source, AnswerSource::FallbackBestTerminal);
    assert!(!result.passed);
    assert_eq!(result.answer, "Mount Everest");
    assert_eq!(result.expansions_used, 3);
    assert_eq!(result.trace.count(EventKind::Backprop), 6);
    assert_eq!(backend.remaining(), 0);
}

#[test]
fn no_terminal_returns_best_leaf_action() {
    let backend = replay(vec![
        agent("Search[Edmund Hillary]", 4, 8, None),
        agent("Lookup[summit]", 6, 8, None),
        agent("Lookup[Everest]", 3, 8, None),
    ]);
    let mut cfg = config(EnvKind::WikiQa, "unused.json");
    cfg.max_expansions = 1;
    let result = run_master_with(&wiki_task("hillary-mountain"), &cfg, &backend).unwrap();
    assert_eq!(result.source, AnswerSource::NoTerminal);
    assert_eq!(result.answer, "Lookup[summit]");
    assert!(!result.passed);
}

#[test]
fn unparseable_thought_action_becomes_spawn_error() {
    let mut entries = agent("Search[Edmund Hillary]", 5, 8, None);
    entries.push(ScriptEntry::new(Phase::ThoughtAction, "I am not sure."));
    entries.push(ScriptEntry::new(Phase::ThoughtAction, "Still thinking."));
    entries.extend(agent("Finish[Mount Everest]", 9, 9, Some(true)));
    let backend = ReplayBackend::new(entries);
    let result = run_master_with(&wiki_task("hillary-mountain"), &config(EnvKind::WikiQa, "x"), &backend).unwrap();
    assert_eq!(result.trace.nodes.len(), 2);
    assert_eq!(result.answer, "Mount Everest");
    let incidents = &result.trace.incidents;
    assert_eq!(incidents.len(), 3);
    assert!(incidents.iter().all(|i| i.phase == Phase::ThoughtAction && i.round == 1 && i.parent == Some(0)));
    assert_eq!(backend.remaining(), 0);
}

#[test]
fn unparseable_assessment_and_evaluation_use_fallbacks() {
    let entries = vec![
        ScriptEntry::new(Phase::ThoughtAction, "Action: Finish[K2]"),
        ScriptEntry::new(Phase::Validation, "fine"),
        ScriptEntry::new(Phase::Assessment, "no numbers here"),
        ScriptEntry::new(Phase::Assessment, "still none"),
        ScriptEntry::new(Phase::Evaluation, "maybe"),
        ScriptEntry::new(Phase::Evaluation, "unclear"),
    ];
    let backend = ReplayBackend::new(entries);
    let result = run_master_with(&wiki_task("hillary-mountain"), &config(EnvKind::WikiQa, "x"), &backend).unwrap();
    let root = &result.trace.nodes[0];
    assert_eq!((root.stats.r0, root.stats.c0), (0.5, 0.1));
    assert_eq!(root.passed, Some(false));
    assert_eq!(root.context.thought, "");
    assert_eq!(result.source, AnswerSource::FallbackBestTerminal);
    assert_eq!(result.answer, "K2");
    assert_eq!(result.expansions_used, 0);
    assert_eq!(result.trace.incidents.len(), 6);
}

#[test]
fn gateway_failure_aborts_with_partial_trace() {
    let backend = replay(vec![agent("Search[Edmund Hillary]", 5, 8, None), agent("Lookup[summit]", 6, 8, None)]);
    let abort = run_master_with(&wiki_task("hillary-mountain"), &config(EnvKind::WikiQa, "x"), &backend).unwrap_err();
    assert!(matches!(abort.error, RunError::Gateway(GatewayError::Replay(_))));
    let trace = abort.trace.expect("partial trace");
    assert_eq!(trace.nodes.len(), 2);
    assert!(trace.outcome.is_none());
    assert!(trace.error.unwrap().contains("ThoughtAction"));
    assert_eq!(trace.ledger.calls(), 6);
}

#[test]
fn environment_mismatch_is_a_config_error() {
    let backend = ReplayBackend::new(vec![]);
    let abort = run_master_with(&wiki_task("hillary-mountain"), &config(EnvKind::MockShop, "x"), &backend).unwrap_err();
    assert!(matches!(abort.error, RunError::Config(_)));
    assert!(abort.trace.is_none());
}

#[test]
fn trace_replay_rebuilds_the_tree() {
    let backend = script("comedienne.json");
    let result = run_master_with(&wiki_task("dawn-french"), &config(EnvKind::WikiQa, "comedienne.json"), &backend).unwrap();
    let text = result.trace.to_canonical_json();
    let doc = TraceDocument::from_json(&text).unwrap();
    assert_eq!(doc, result.trace);
    let tree = doc.replay().unwrap();
    assert_eq!(tree.nodes(), &doc.nodes[..]);
    tree.check_invariants().unwrap();
    assert_eq!(doc.to_canonical_json(), text);
}

#[test]
fn config_snapshot_names_key_variable_only() {
    std::env::set_var("TREEPLAN_TEST_SECRET_KEY", "sk-do-not-leak");
    let mut cfg = config(EnvKind::WikiQa, "comedienne.json");
    cfg.backend = treeplan::llm::BackendConfig::Http(treeplan::llm::HttpConfig {
        api_key_env: Some("TREEPLAN_TEST_SECRET_KEY".into()),
        ..Default::default()
    });
    let backend = script("comedienne.json");
    let result = run_master_with(&wiki_task("dawn-french"), &cfg, &backend).unwrap();
    let text = result.trace.to_canonical_json();
    assert!(text.contains("TREEPLAN_TEST_SECRET_KEY"));
    assert!(!text.contains("sk-do-not-leak"));
}

/// Answers from the prompt alone, so it can serve concurrent callers.
struct Oracle {
    calls: AtomicUsize,
}

impl ChatBackend for Oracle {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = request.prompt_text();
        let text = match request.phase {
            Phase::ThoughtAction if prompt.contains("Action: Search[Edmund Hillary]") => "Action: Finish[Mount Everest]",
            Phase::ThoughtAction => "Action: Search[Edmund Hillary]",
            Phase::Validation => "Validation: ok",
            Phase::Assessment => "Thus the correctness score is 8. The confidence in this score is 8.",
            Phase::Evaluation => "Evaluation: True",
        };
        Ok(ChatResponse { text: text.into(), prompt_tokens: 10, completion_tokens: 2 })
    }

    fn supports_concurrency(&self) -> bool {
        true
    }
}

#[test]
fn parallel_siblings_commit_in_order() {
    let backend = Oracle { calls: AtomicUsize::new(0) };
    let mut cfg = config(EnvKind::WikiQa, "x");
    cfg.parallel_siblings = true;
    cfg.branches = 3;
    let result = run_master_with(&wiki_task("hillary-mountain"), &cfg, &backend).unwrap();
    assert_eq!(result.source, AnswerSource::EarlyTermination);
    assert_eq!(result.trace.nodes.len(), 2);
    assert_eq!(result.trace.nodes[1].created_seq, 1);
    // Root plus three concurrent terminal agents of four calls each.
    assert_eq!(backend.calls.load(Ordering::SeqCst), 3 + 3 * 4);
    assert_eq!(result.ledger.calls(), 15);
    assert_eq!(result.trace.incidents.len(), 2);
}

#[test]
fn shop_run_buys_the_superbox() {
    let task = common::task(EnvKind::MockShop, "shop/tasks.json", "superbox");
    let backend = script("shop_superbox.json");
    let result = run_master_with(&task, &config(EnvKind::MockShop, "shop_superbox.json"), &backend).unwrap();
    assert_eq!(result.answer, "B09LSKQF8C");
    assert_eq!(result.expansions_used, 4);
    let nodes = &result.trace.nodes;
    let features = nodes.iter().find(|n| n.context.action == "click[features]").unwrap();
    assert!(features.context.observation.contains("Quad-core ARM Cortex-A53"));
    let prev = nodes.iter().find(|n| n.context.action == "click[prev]").unwrap();
    let item = nodes.iter().find(|n| n.context.action == "click[b09lskqf8c]").unwrap();
    assert_eq!(prev.context.observation, item.context.observation);
    assert_eq!(backend.remaining(), 0);
}
