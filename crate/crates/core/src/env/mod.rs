//! Task worlds the agents act in.
//!
//! All three share [`TaskEnvironment`]: `reset` returns the preamble shown
//! to the model, `execute` turns an action string into an observation, and
//! `grade` scores a final answer offline against the hidden ground truth.

mod code;
mod shop;
mod tasks;
mod wiki;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use code::{CodeEnv, SandboxConfig, TestOutcome, TestReport};
pub use shop::{Catalog, Product, ShopEnv, ShopTarget};
pub use tasks::{load_tasks, TaskSpec, TasksFile};
pub use wiki::{WikiCorpus, WikiEnv};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing fixture: {0}")]
    MissingFixture(String),
    #[error("grading error: {0}")]
    Grading(String),
    #[error("environment used before reset")]
    NotReset,
    #[error("sandbox I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvKind {
    #[serde(rename = "wiki")]
    WikiQa,
    #[serde(rename = "shop")]
    MockShop,
    #[serde(rename = "code")]
    CodeTasks,
}

impl EnvKind {
    pub fn label(&self) -> &'static str {
        match self {
            EnvKind::WikiQa => "wiki",
            EnvKind::MockShop => "shop",
            EnvKind::CodeTasks => "code",
        }
    }

    /// Default expansion budget for this kind of task.
    pub fn default_max_expansions(&self) -> u32 {
        match self {
            EnvKind::MockShop => 8,
            EnvKind::WikiQa | EnvKind::CodeTasks => 3,
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wiki" => Ok(EnvKind::WikiQa),
            "shop" => Ok(EnvKind::MockShop),
            "code" => Ok(EnvKind::CodeTasks),
            other => Err(format!("unknown environment `{other}` (expected wiki|shop|code)")),
        }
    }
}

/// Hidden reference used only by `grade`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroundTruth {
    Answer(String),
    Tests(Vec<String>),
    Purchase(ShopTarget),
}

impl GroundTruth {
    /// Every literal string the ground truth consists of.
    pub fn strings(&self) -> Vec<String> {
        match self {
            GroundTruth::Answer(a) => vec![a.clone()],
            GroundTruth::Tests(t) => t.clone(),
            GroundTruth::Purchase(target) => {
                let mut out = vec![target.product_id.clone()];
                out.extend(target.options.iter().map(|(k, v)| format!("{k}={v}")));
                out
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Fixtures {
    Wiki(Arc<WikiCorpus>),
    Shop(Arc<Catalog>),
    /// Visible test statements for a code task.
    Code(Vec<String>),
}

impl Fixtures {
    pub fn kind(&self) -> EnvKind {
        match self {
            Fixtures::Wiki(_) => EnvKind::WikiQa,
            Fixtures::Shop(_) => EnvKind::MockShop,
            Fixtures::Code(_) => EnvKind::CodeTasks,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskInstance {
    pub id: String,
    pub instruction: String,
    pub ground_truth: Option<GroundTruth>,
    pub fixtures: Fixtures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: String,
    pub terminal_detected: bool,
    /// Test-pass fraction; code tasks only.
    pub objective_score: Option<f64>,
    /// Final answer carried by a terminal action.
    pub answer: Option<String>,
}

impl StepOutcome {
    fn plain(observation: impl Into<String>) -> Self {
        Self {
            observation: observation.into(),
            terminal_detected: false,
            objective_score: None,
            answer: None,
        }
    }
}

pub trait TaskEnvironment: Send {
    fn kind(&self) -> EnvKind;

    /// Starts a fresh session for `task` and returns the preamble.
    fn reset(&mut self, task: &TaskInstance) -> Result<String, EnvError>;

    /// Runs one action. Unusable actions yield an "Invalid action" observation.
    fn execute(&mut self, action: &str) -> Result<StepOutcome, EnvError>;

    fn grade(&mut self, task: &TaskInstance, final_answer: &str) -> Result<f64, EnvError>;

    /// A fresh, unreset environment of the same kind and configuration.
    fn fork(&self) -> Box<dyn TaskEnvironment>;

    fn is_terminal_action(&self, action: &str) -> bool {
        is_terminal_action(self.kind(), action)
    }

    /// Resets and re-executes `actions`, leaving the environment in the
    /// state reached at the end of that path. Returns the preamble.
    fn restore_path(&mut self, task: &TaskInstance, actions: &[&str]) -> Result<String, EnvError> {
        let preamble = self.reset(task)?;
        for action in actions {
            self.execute(action)?;
        }
        Ok(preamble)
    }
}

pub fn make_environment(kind: EnvKind, sandbox: &SandboxConfig) -> Box<dyn TaskEnvironment> {
    match kind {
        EnvKind::WikiQa => Box::new(WikiEnv::new()),
        EnvKind::MockShop => Box::new(ShopEnv::new()),
        EnvKind::CodeTasks => Box::new(CodeEnv::new(sandbox.clone())),
    }
}

/// Whether `action` submits a final answer in an environment of `kind`.
pub fn is_terminal_action(kind: EnvKind, action: &str) -> bool {
    match kind {
        EnvKind::WikiQa => action
            .trim_start()
            .get(..7)
            .is_some_and(|p| p.eq_ignore_ascii_case("finish[")),
        EnvKind::MockShop => matches!(
            parse_bracketed(action),
            Some((verb, arg)) if verb.eq_ignore_ascii_case("click") && normalize_ws(&arg).eq_ignore_ascii_case("buy now")
        ),
        EnvKind::CodeTasks => true,
    }
}

/// Splits `Verb[argument]` on the first line of `action`.
pub(crate) fn parse_bracketed(action: &str) -> Option<(String, String)> {
    let line = action.trim().lines().next()?.trim();
    let open = line.find('[')?;
    let close = line.rfind(']')?;
    if close < open {
        return None;
    }
    let verb = line[..open].trim();
    if verb.is_empty() {
        return None;
    }
    Some((verb.to_string(), line[open + 1..close].trim().to_string()))
}

pub(crate) fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased alphanumeric words.
pub(crate) fn words(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_actions() {
        assert!(is_terminal_action(EnvKind::WikiQa, "Finish[Joan Rivers]"));
        assert!(!is_terminal_action(EnvKind::WikiQa, "Search[American comedienne]"));
        assert!(is_terminal_action(EnvKind::MockShop, "click[buy now]"));
        assert!(is_terminal_action(EnvKind::MockShop, "click[Buy  Now]"));
        assert!(!is_terminal_action(EnvKind::MockShop, "click[b09lskqf8c]"));
        assert!(is_terminal_action(EnvKind::CodeTasks, "def f(): pass"));
        assert!(is_terminal_action(EnvKind::CodeTasks, "anything at all"));
    }

    #[test]
    fn bracket_parsing() {
        assert_eq!(
            parse_bracketed("  Search[Dawn French's Girls Who Do Comedy]  "),
            Some(("Search".into(), "Dawn French's Girls Who Do Comedy".into()))
        );
        assert_eq!(parse_bracketed("Finish[]"), Some(("Finish".into(), "".into())));
        assert_eq!(parse_bracketed("[x]"), None);
        assert_eq!(parse_bracketed("nothing"), None);
    }

    #[test]
    fn env_kind_labels() {
        for kind in [EnvKind::WikiQa, EnvKind::MockShop, EnvKind::CodeTasks] {
            assert_eq!(kind.label().parse::<EnvKind>().unwrap(), kind);
        }
        assert_eq!(EnvKind::MockShop.default_max_expansions(), 8);
        assert_eq!(EnvKind::WikiQa.default_max_expansions(), 3);
        assert!("web".parse::<EnvKind>().is_err());
    }
}
