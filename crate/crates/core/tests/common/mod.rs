#![allow(dead_code)]

use std::path::{Path, PathBuf};

use treeplan::env::{load_tasks, EnvKind, TaskInstance};
use treeplan::llm::{BackendConfig, ReplayBackend, ScriptEntry};
use treeplan::RunConfig;

pub fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(rel)
}

pub fn task(kind: EnvKind, tasks_file: &str, id: &str) -> TaskInstance {
    load_tasks(kind, &data(tasks_file))
        .unwrap()
        .into_iter()
        .find(|t| t.id == id)
        .unwrap_or_else(|| panic!("no task {id}"))
}

pub fn script(name: &str) -> ReplayBackend {
    ReplayBackend::from_file(&data(&format!("scripts/{name}"))).unwrap()
}

pub fn config(kind: EnvKind, script: &str) -> RunConfig {
    RunConfig::new(kind, BackendConfig::Replay { script_path: data(&format!("scripts/{script}")) })
}

pub fn wiki_task(id: &str) -> TaskInstance {
    task(EnvKind::WikiQa, "wiki/tasks.json", id)
}

/// ThoughtAction, Validation, Assessment and optional Evaluation replies for one agent.
pub fn agent(action: &str, score: u8, confidence: u8, evaluation: Option<bool>) -> Vec<ScriptEntry> {
    use treeplan::llm::Phase;
    let mut out = vec![
        ScriptEntry::new(Phase::ThoughtAction, format!("Thought: next step.\nAction: {action}")),
        ScriptEntry::new(Phase::Validation, "Validation: aligned."),
        ScriptEntry::new(
            Phase::Assessment,
            format!("Thus the correctness score is {score}. The confidence in this score is {confidence}."),
        ),
    ];
    if let Some(verdict) = evaluation {
        out.push(ScriptEntry::new(Phase::Evaluation, format!("Evaluation: {}", if verdict { "True" } else { "False" })));
    }
    out
}
