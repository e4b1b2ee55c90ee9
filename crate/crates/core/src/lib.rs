//! Tree search over language-model agents.
//!
//! Each agent proposes a thought and an action, executes the action in a
//! task environment, validates and scores its own step, and, when it
//! submits an answer, evaluates it. Agents form a tree; the next agent to
//! expand is chosen by a confidence-weighted UCT score, and rewards from
//! failed answers propagate to every ancestor.

pub mod cli;
pub mod config;
pub mod env;
pub mod llm;
pub mod orchestrator;
pub mod report;
pub mod trace;
pub mod tree;
pub mod uct;

pub use orchestrator::{run_batch, run_master, RunConfig, RunError, RunResult};
pub use trace::{AnswerSource, TraceDocument};
pub use tree::{AgentContext, AgentNode, NodeId, ReasoningTree};
pub use uct::{RewardStats, UctVariant};
