//! Run traces: the serialized tree, the ordered event log, token totals, and
//! a canonical JSON encoding that is byte-stable across identical runs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::llm::{Phase, TokenLedger};
use crate::tree::{AgentNode, NodeId, ReasoningTree, TreeError};
use crate::uct::RewardStats;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Select,
    Expand,
    Backprop,
    EarlyStop,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub round: u32,
    pub kind: EventKind,
    pub nodes: Vec<NodeId>,
}

/// Something that went wrong inside a run without aborting it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incident {
    pub round: u32,
    /// Parent of the agent being spawned; `None` for the root.
    pub parent: Option<NodeId>,
    pub phase: Phase,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerSource {
    EarlyTermination,
    FallbackBestTerminal,
    NoTerminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceOutcome {
    pub answer: String,
    pub passed: bool,
    pub source: AnswerSource,
    pub expansions_used: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDocument {
    pub schema_version: u32,
    pub task_id: String,
    pub config: Value,
    pub nodes: Vec<AgentNode>,
    pub events: Vec<TraceEvent>,
    pub ledger: TokenLedger,
    pub incidents: Vec<Incident>,
    /// Absent when the run aborted.
    pub outcome: Option<TraceOutcome>,
    pub error: Option<String>,
}

impl TraceDocument {
    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("trace serializes");
        canonical_json(&value)
    }

    pub fn from_json(raw: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(raw)
    }

    /// Rebuilds the tree by applying `Expand` and `Backprop` events to an
    /// empty tree, taking node payloads from the node list.
    pub fn replay(&self) -> Result<ReasoningTree, TreeError> {
        let mut tree = ReasoningTree::new();
        for event in &self.events {
            match event.kind {
                EventKind::Expand => {
                    for &id in &event.nodes {
                        let record = self
                            .nodes
                            .get(id as usize)
                            .ok_or(TreeError::NotFound(id))?;
                        let stats = RewardStats::new(record.stats.r0, record.stats.c0)?;
                        let new_id = match record.parent {
                            None => {
                                let root = tree.add_root(record.context.clone(), stats)?;
                                if let Some(passed) = record.passed {
                                    tree.mark_terminal(root, passed)?;
                                }
                                root
                            }
                            Some(parent) => tree.add_child(
                                parent,
                                record.context.clone(),
                                stats,
                                record.terminal,
                                record.passed,
                            )?,
                        };
                        if new_id != id {
                            return Err(TreeError::State(format!(
                                "expand event for node {id} produced node {new_id}"
                            )));
                        }
                        tree.set_answer(new_id, record.answer.clone())?;
                    }
                }
                EventKind::Backprop => {
                    for &id in &event.nodes {
                        tree.backpropagate(id)?;
                    }
                }
                EventKind::Select | EventKind::EarlyStop | EventKind::Fallback => {}
            }
        }
        Ok(tree)
    }
}

/// Writes `doc` as canonical JSON.
pub fn export_trace(doc: &TraceDocument, path: &Path) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(doc.to_canonical_json().as_bytes())?;
    file.write_all(b"\n")
}

/// Two-space indented JSON with sorted object keys and every float written
/// with 17 significant digits.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, 0, &mut out);
    out
}

fn format_float(x: f64) -> String {
    // 17 significant digits round-trips every f64.
    format!("{x:.16e}")
}

fn write_value(value: &Value, indent: usize, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&format_float(n.as_f64().expect("f64 number")));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                push_indent(indent + 1, out);
                write_value(item, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            push_indent(indent, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, key) in keys.iter().enumerate() {
                push_indent(indent + 1, out);
                out.push_str(&serde_json::to_string(key).expect("key serializes"));
                out.push_str(": ");
                write_value(&map[*key], indent + 1, out);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            push_indent(indent, out);
            out.push('}');
        }
    }
}

fn push_indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("  ");
    }
}
