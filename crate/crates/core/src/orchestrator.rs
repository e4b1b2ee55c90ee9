//! The master control loop: spawn agents, select by UCT, backpropagate
//! failures, stop on the first passing terminal, otherwise fall back.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{make_environment, EnvError, EnvKind, SandboxConfig, TaskEnvironment, TaskInstance};
use crate::llm::{
    connect, current_agent_block, parse_assessment, parse_evaluation, parse_thought_action, BackendConfig, ChatBackend, ChatRequest,
    ChatResponse, GatewayError, Phase, PhaseTemperatures, PromptBuilder, PromptTemplates, TokenLedger,
};
use crate::trace::{AnswerSource, EventKind, Incident, TraceDocument, TraceEvent, TraceOutcome, SCHEMA_VERSION};
use crate::tree::{AgentContext, Eligibility, NodeId, ReasoningTree, TreeError};
use crate::uct::{normalize_assessment, RewardStats, UctVariant};

/// Score and confidence substituted when an assessment cannot be parsed.
pub const FALLBACK_ASSESSMENT: (u8, u8) = (5, 1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvKind,
    /// Children spawned per expansion round.
    pub branches: u32,
    /// Expansion rounds after the root.
    pub max_expansions: u32,
    pub variant: UctVariant,
    pub backend: BackendConfig,
    pub temperatures: PhaseTemperatures,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    /// Code tasks: pass/fail from the visible tests instead of an Evaluation call.
    pub objective_evaluation: bool,
    pub templates_dir: Option<PathBuf>,
    pub sandbox: SandboxConfig,
    /// Spawn siblings of one round concurrently. Needs a concurrent backend.
    pub parallel_siblings: bool,
    /// Tasks run at once in a batch. Needs a concurrent backend.
    pub jobs: usize,
}

impl RunConfig {
    pub fn new(env: EnvKind, backend: BackendConfig) -> Self {
        Self {
            env,
            branches: 2,
            max_expansions: env.default_max_expansions(),
            variant: UctVariant::Full,
            backend,
            temperatures: PhaseTemperatures::default(),
            max_tokens: 1024,
            seed: None,
            objective_evaluation: env == EnvKind::CodeTasks,
            templates_dir: None,
            sandbox: SandboxConfig::default(),
            parallel_siblings: false,
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.branches == 0 {
            return Err(RunError::Config("branches must be at least 1".into()));
        }
        if self.max_expansions == 0 {
            return Err(RunError::Config("max_expansions must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(RunError::Config("jobs must be at least 1".into()));
        }
        if let UctVariant::LambdaWeighted { lambda } = self.variant {
            UctVariant::lambda_weighted(lambda).map_err(|e| RunError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Nodes that may be chosen for expansion. Code tasks also expand
    /// failed candidates.
    pub fn eligibility(&self) -> Eligibility {
        match self.env {
            EnvKind::CodeTasks => Eligibility::IncludeFailedTerminals,
            _ => Eligibility::NonTerminal,
        }
    }

    fn objective_mode(&self) -> bool {
        self.env == EnvKind::CodeTasks && self.objective_evaluation
    }

    fn prompt_builder(&self) -> Result<PromptBuilder, RunError> {
        let mut builder = PromptBuilder::new(self.env);
        if let Some(dir) = &self.templates_dir {
            builder.templates = PromptTemplates::from_dir(dir)
                .map_err(|e| RunError::Config(format!("templates in {}: {e}", dir.display())))?;
        }
        builder.temperatures = self.temperatures;
        builder.max_tokens = self.max_tokens;
        Ok(builder)
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// A failed run together with the trace up to the failure.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct RunAbort {
    pub error: RunError,
    pub trace: Option<Box<TraceDocument>>,
}

impl From<RunError> for RunAbort {
    fn from(error: RunError) -> Self {
        Self { error, trace: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub request: ChatRequest,
    pub response: ChatResponse,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub task_id: String,
    pub answer: String,
    pub passed: bool,
    pub source: AnswerSource,
    pub expansions_used: u32,
    pub ledger: TokenLedger,
    pub trace: TraceDocument,
    pub transcript: Vec<CallRecord>,
}

impl RunResult {
    pub fn tree(&self) -> Result<ReasoningTree, TreeError> {
        self.trace.replay()
    }
}

/// Everything a spawned agent contributes before it joins the tree.
struct Draft {
    context: AgentContext,
    stats: RewardStats,
    terminal: bool,
    passed: Option<bool>,
    answer: Option<String>,
}

struct Spawned {
    draft: Option<Draft>,
    calls: Vec<CallRecord>,
    incidents: Vec<Incident>,
}

struct Spawner<'a> {
    task: &'a TaskInstance,
    config: &'a RunConfig,
    backend: &'a dyn ChatBackend,
    prompts: &'a PromptBuilder,
}

struct CallLog {
    round: u32,
    parent: Option<NodeId>,
    calls: Vec<CallRecord>,
    incidents: Vec<Incident>,
}

impl CallLog {
    fn incident(&mut self, phase: Phase, message: String) {
        log::warn!("round {}: {phase}: {message}", self.round);
        self.incidents.push(Incident { round: self.round, parent: self.parent, phase, message });
    }
}

fn strip_label<'s>(text: &'s str, label: &str) -> &'s str {
    let trimmed = text.trim();
    match trimmed.get(..label.len()) {
        Some(head) if head.eq_ignore_ascii_case(label) => trimmed[label.len()..].trim(),
        _ => trimmed,
    }
}

impl Spawner<'_> {
    fn call(&self, request: ChatRequest, log: &mut CallLog) -> Result<String, GatewayError> {
        let response = self.backend.complete(&request)?;
        let text = response.text.clone();
        log.calls.push(CallRecord { request, response });
        Ok(text)
    }

    /// Calls `request` and parses the reply, retrying once on a parse failure.
    fn call_parsed<T, E: std::fmt::Display>(
        &self,
        request: &ChatRequest,
        mut parse: impl FnMut(&str) -> Result<T, E>,
        log: &mut CallLog,
    ) -> Result<Option<T>, GatewayError> {
        for attempt in 0..2 {
            let text = self.call(request.clone(), log)?;
            match parse(&text) {
                Ok(v) => return Ok(Some(v)),
                Err(e) => log.incident(request.phase, format!("unparseable reply (attempt {}): {e}", attempt + 1)),
            }
        }
        Ok(None)
    }

    fn spawn(
        &self,
        env: &mut dyn TaskEnvironment,
        path: &[AgentContext],
        parent: Option<NodeId>,
        round: u32,
    ) -> Result<Spawned, RunError> {
        let mut log = CallLog { round, parent, calls: Vec::new(), incidents: Vec::new() };
        let draft = self.draft(env, path, &mut log)?;
        Ok(Spawned { draft, calls: log.calls, incidents: log.incidents })
    }

    fn draft(
        &self,
        env: &mut dyn TaskEnvironment,
        path: &[AgentContext],
        log: &mut CallLog,
    ) -> Result<Option<Draft>, RunError> {
        let actions: Vec<&str> = path.iter().map(|c| c.action.as_str()).collect();
        let preamble = env.restore_path(self.task, &actions)?;
        let prompts = self.prompts;

        let request = prompts.build(Phase::ThoughtAction, &preamble, path, "");
        let Some((thought, action)) = self.call_parsed(&request, parse_thought_action, log)? else {
            log.incident(Phase::ThoughtAction, "agent discarded: no action after retry".into());
            return Ok(None);
        };

        let outcome = env.execute(&action)?;
        let mut context = AgentContext {
            thought,
            action,
            observation: outcome.observation.clone(),
            ..Default::default()
        };

        let request = prompts.build(Phase::Validation, &preamble, path, &current_agent_block(&context, false));
        context.validation = strip_label(&self.call(request, log)?, "Validation:").to_string();

        let request = prompts.build(Phase::Assessment, &preamble, path, &current_agent_block(&context, true));
        let mut assessment_text = String::new();
        let parsed = self.call_parsed(
            &request,
            |text| {
                let parsed = parse_assessment(text);
                if parsed.is_ok() {
                    assessment_text = strip_label(text, "Assessment:").to_string();
                }
                parsed
            },
            log,
        )?;
        let (score, confidence) = parsed.unwrap_or_else(|| {
            log.incident(Phase::Assessment, format!("substituted score/confidence {FALLBACK_ASSESSMENT:?}"));
            FALLBACK_ASSESSMENT
        });
        context.assessment = if assessment_text.is_empty() {
            crate::llm::parse::render_assessment(score, confidence)
        } else {
            assessment_text
        };
        let (r0, c0) = normalize_assessment(score, confidence);
        let stats = RewardStats::new(r0, c0).map_err(TreeError::from)?;

        let terminal = env.is_terminal_action(&context.action);
        let passed = if !terminal {
            None
        } else if self.config.objective_mode() {
            Some(outcome.objective_score.is_some_and(|s| s >= 1.0))
        } else {
            let request = prompts.build(Phase::Evaluation, &preamble, path, &current_agent_block(&context, true));
            let verdict = self.call_parsed(&request, parse_evaluation, log)?;
            Some(verdict.unwrap_or_else(|| {
                log.incident(Phase::Evaluation, "substituted verdict false".into());
                false
            }))
        };

        let answer = if terminal { outcome.answer.clone() } else { None };
        Ok(Some(Draft { context, stats, terminal, passed, answer }))
    }
}

struct Run<'a> {
    spawner: Spawner<'a>,
    env: Box<dyn TaskEnvironment>,
    tree: ReasoningTree,
    events: Vec<TraceEvent>,
    ledger: TokenLedger,
    transcript: Vec<CallRecord>,
    incidents: Vec<Incident>,
    expansions_used: u32,
}

enum Committed {
    Discarded,
    Added(NodeId),
    Passed(NodeId),
}

impl Run<'_> {
    fn event(&mut self, round: u32, kind: EventKind, nodes: Vec<NodeId>) {
        self.events.push(TraceEvent { round, kind, nodes });
    }

    fn absorb(&mut self, calls: Vec<CallRecord>, incidents: Vec<Incident>) {
        for record in &calls {
            self.ledger.add(record.request.phase, &record.response);
        }
        self.transcript.extend(calls);
        self.incidents.extend(incidents);
    }

    fn commit(&mut self, spawned: Spawned, parent: Option<NodeId>, round: u32) -> Result<Committed, RunError> {
        self.absorb(spawned.calls, spawned.incidents);
        let Some(draft) = spawned.draft else {
            return Ok(Committed::Discarded);
        };
        let id = match parent {
            None => {
                let id = self.tree.add_root(draft.context, draft.stats)?;
                if let Some(passed) = draft.passed {
                    self.tree.mark_terminal(id, passed)?;
                }
                id
            }
            Some(p) => self.tree.add_child(p, draft.context, draft.stats, draft.terminal, draft.passed)?,
        };
        self.tree.set_answer(id, draft.answer)?;
        self.event(round, EventKind::Expand, vec![id]);
        match draft.passed {
            Some(true) => {
                self.event(round, EventKind::EarlyStop, vec![id]);
                Ok(Committed::Passed(id))
            }
            Some(false) => {
                self.tree.backpropagate(id)?;
                self.event(round, EventKind::Backprop, vec![id]);
                Ok(Committed::Added(id))
            }
            None => Ok(Committed::Added(id)),
        }
    }

    fn spawn_one(&mut self, parent: Option<NodeId>, round: u32) -> Result<Committed, RunError> {
        let path = match parent {
            Some(p) => self.tree.path_context(p)?,
            None => Vec::new(),
        };
        let spawned = self.spawner.spawn(self.env.as_mut(), &path, parent, round)?;
        self.commit(spawned, parent, round)
    }

    /// Spawns all children of `parent` concurrently, committing in order.
    fn spawn_siblings(&mut self, parent: NodeId, round: u32) -> Result<Option<NodeId>, RunError> {
        let path = self.tree.path_context(parent)?;
        let branches = self.spawner.config.branches as usize;
        let spawner = &self.spawner;
        let template = &self.env;
        let results: Vec<Result<Spawned, RunError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..branches)
                .map(|_| {
                    let mut env = template.fork();
                    let path = &path;
                    scope.spawn(move || spawner.spawn(env.as_mut(), path, Some(parent), round))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(RunError::Config("agent thread panicked".into()))))
                .collect()
        });
        let mut passed = None;
        for spawned in results {
            let spawned = spawned?;
            if passed.is_some() {
                let mut incidents = spawned.incidents;
                incidents.push(Incident {
                    round,
                    parent: Some(parent),
                    phase: Phase::ThoughtAction,
                    message: "concurrent sibling dropped after early stop".into(),
                });
                self.absorb(spawned.calls, incidents);
            } else if let Committed::Passed(id) = self.commit(spawned, Some(parent), round)? {
                passed = Some(id);
            }
        }
        Ok(passed)
    }

    fn execute(&mut self) -> Result<TraceOutcome, RunError> {
        let config = self.spawner.config;
        let root = match self.spawn_one(None, 0)? {
            Committed::Passed(id) => return self.finish_early(id),
            Committed::Added(id) => id,
            Committed::Discarded => {
                return Ok(TraceOutcome {
                    answer: String::new(),
                    passed: false,
                    source: AnswerSource::NoTerminal,
                    expansions_used: 0,
                })
            }
        };
        debug_assert_eq!(self.tree.root(), Some(root));

        for round in 1..=config.max_expansions {
            let selected = match self.tree.select_with_eligibility(config.variant, config.eligibility()) {
                Ok(id) => id,
                Err(TreeError::Exhausted) => break,
                Err(e) => return Err(e.into()),
            };
            self.event(round, EventKind::Select, vec![selected]);
            self.expansions_used = round;
            if config.parallel_siblings && config.branches > 1 && self.spawner.backend.supports_concurrency() {
                if let Some(id) = self.spawn_siblings(selected, round)? {
                    return self.finish_early(id);
                }
            } else {
                for _ in 0..config.branches {
                    if let Committed::Passed(id) = self.spawn_one(Some(selected), round)? {
                        return self.finish_early(id);
                    }
                }
            }
        }
        self.fallback()
    }

    fn answer_of(&self, id: NodeId) -> Result<String, RunError> {
        let node = self.tree.node(id)?;
        Ok(node.answer.clone().unwrap_or_else(|| node.context.action.clone()))
    }

    fn finish_early(&mut self, id: NodeId) -> Result<TraceOutcome, RunError> {
        Ok(TraceOutcome {
            answer: self.answer_of(id)?,
            passed: true,
            source: AnswerSource::EarlyTermination,
            expansions_used: self.expansions_used,
        })
    }

    fn fallback(&mut self) -> Result<TraceOutcome, RunError> {
        let round = self.expansions_used;
        let (id, source) = match self.tree.best_terminal() {
            Some(id) => (id, AnswerSource::FallbackBestTerminal),
            None => (
                self.tree.best_leaf().ok_or(TreeError::State("empty tree".into()))?,
                AnswerSource::NoTerminal,
            ),
        };
        self.event(round, EventKind::Fallback, vec![id]);
        Ok(TraceOutcome {
            answer: self.answer_of(id)?,
            passed: false,
            source,
            expansions_used: self.expansions_used,
        })
    }

    fn document(&self, outcome: Option<TraceOutcome>, error: Option<String>) -> TraceDocument {
        let task = self.spawner.task;
        TraceDocument {
            schema_version: SCHEMA_VERSION,
            task_id: task.id.clone(),
            config: serde_json::to_value(self.spawner.config).expect("config serializes"),
            nodes: self.tree.nodes().to_vec(),
            events: self.events.clone(),
            ledger: self.ledger.clone(),
            incidents: self.incidents.clone(),
            outcome,
            error,
        }
    }
}

/// Runs one task against an already connected backend.
pub fn run_master_with(
    task: &TaskInstance,
    config: &RunConfig,
    backend: &dyn ChatBackend,
) -> Result<RunResult, RunAbort> {
    config.validate()?;
    if task.fixtures.kind() != config.env {
        return Err(RunError::Config(format!(
            "task {} belongs to the {} environment, not {}",
            task.id,
            task.fixtures.kind().label(),
            config.env.label()
        ))
        .into());
    }
    let prompts = config.prompt_builder()?;
    let mut run = Run {
        spawner: Spawner { task, config, backend, prompts: &prompts },
        env: make_environment(config.env, &config.sandbox),
        tree: ReasoningTree::new(),
        events: Vec::new(),
        ledger: TokenLedger::new(),
        transcript: Vec::new(),
        incidents: Vec::new(),
        expansions_used: 0,
    };
    match run.execute() {
        Ok(outcome) => Ok(RunResult {
            task_id: task.id.clone(),
            answer: outcome.answer.clone(),
            passed: outcome.passed,
            source: outcome.source,
            expansions_used: outcome.expansions_used,
            ledger: run.ledger.clone(),
            trace: run.document(Some(outcome), None),
            transcript: std::mem::take(&mut run.transcript),
        }),
        Err(error) => {
            log::error!("task {} aborted: {error}", task.id);
            let trace = run.document(None, Some(error.to_string()));
            Err(RunAbort { error, trace: Some(Box::new(trace)) })
        }
    }
}

/// Connects the configured backend and runs one task.
pub fn run_master(task: &TaskInstance, config: &RunConfig) -> Result<RunResult, RunAbort> {
    config.validate()?;
    let backend = connect(&config.backend, config.seed).map_err(RunError::from)?;
    run_master_with(task, config, backend.as_ref())
}

#[derive(Debug)]
pub struct TaskRecord {
    pub task_id: String,
    pub outcome: Result<RunResult, RunAbort>,
    /// Offline grade against the hidden ground truth, when available.
    pub grade: Option<f64>,
}

impl TaskRecord {
    pub fn trace(&self) -> Option<&TraceDocument> {
        match &self.outcome {
            Ok(r) => Some(&r.trace),
            Err(a) => a.trace.as_deref(),
        }
    }

    pub fn tokens(&self) -> u64 {
        self.trace().map_or(0, |t| t.ledger.total)
    }
}

fn grade(task: &TaskInstance, config: &RunConfig, result: &RunResult) -> Option<f64> {
    task.ground_truth.as_ref()?;
    let mut env = make_environment(config.env, &config.sandbox);
    match env.grade(task, &result.answer) {
        Ok(g) => Some(g),
        Err(e) => {
            log::warn!("task {}: grading failed: {e}", task.id);
            None
        }
    }
}

/// Runs every task, in order unless `jobs > 1` and the backend allows
/// concurrent use. A failing task is recorded and the batch continues.
pub fn run_batch_with(tasks: &[TaskInstance], config: &RunConfig, backend: &dyn ChatBackend) -> Vec<TaskRecord> {
    let run_one = |task: &TaskInstance| {
        let outcome = run_master_with(task, config, backend);
        let grade = outcome.as_ref().ok().and_then(|r| grade(task, config, r));
        TaskRecord { task_id: task.id.clone(), outcome, grade }
    };
    let jobs = config.jobs.min(tasks.len());
    if jobs <= 1 || !backend.supports_concurrency() {
        return tasks.iter().map(run_one).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<TaskRecord>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let record = run_one(task);
                *slots[i].lock().expect("slot lock") = Some(record);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every task ran"))
        .collect()
}

pub fn run_batch(tasks: &[TaskInstance], config: &RunConfig) -> Result<Vec<TaskRecord>, RunError> {
    config.validate()?;
    let backend = connect(&config.backend, config.seed)?;
    Ok(run_batch_with(tasks, config, backend.as_ref()))
}
