use std::path::Path;

use super::{ChatRequest, Message, Phase, PhaseTemperatures};
use crate::env::EnvKind;
use crate::tree::AgentContext;

const THOUGHT_ACTION: &str = include_str!("../../data/templates/thought_action.txt");
const VALIDATION: &str = include_str!("../../data/templates/validation.txt");
const ASSESSMENT: &str = include_str!("../../data/templates/assessment.txt");
const EVALUATION: &str = include_str!("../../data/templates/evaluation.txt");
const FEWSHOT_WIKI: &str = include_str!("../../data/templates/fewshot_wiki.txt");
const FEWSHOT_SHOP: &str = include_str!("../../data/templates/fewshot_shop.txt");
const FEWSHOT_CODE: &str = include_str!("../../data/templates/fewshot_code.txt");

/// Phase instructions and per-environment examples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub thought_action: String,
    pub validation: String,
    pub assessment: String,
    pub evaluation: String,
    pub fewshot_wiki: String,
    pub fewshot_shop: String,
    pub fewshot_code: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            thought_action: THOUGHT_ACTION.into(),
            validation: VALIDATION.into(),
            assessment: ASSESSMENT.into(),
            evaluation: EVALUATION.into(),
            fewshot_wiki: FEWSHOT_WIKI.into(),
            fewshot_shop: FEWSHOT_SHOP.into(),
            fewshot_code: FEWSHOT_CODE.into(),
        }
    }
}

impl PromptTemplates {
    /// Loads `<name>.txt` files from `dir`, keeping built-in text for any that are missing.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut templates = Self::default();
        let slots: [(&str, &mut String); 7] = [
            ("thought_action", &mut templates.thought_action),
            ("validation", &mut templates.validation),
            ("assessment", &mut templates.assessment),
            ("evaluation", &mut templates.evaluation),
            ("fewshot_wiki", &mut templates.fewshot_wiki),
            ("fewshot_shop", &mut templates.fewshot_shop),
            ("fewshot_code", &mut templates.fewshot_code),
        ];
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            match std::fs::read_to_string(&path) {
                Ok(text) => *slot = text,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(e),
            }
        }
        Ok(templates)
    }

    fn instruction(&self, phase: Phase) -> &str {
        match phase {
            Phase::ThoughtAction => &self.thought_action,
            Phase::Validation => &self.validation,
            Phase::Assessment => &self.assessment,
            Phase::Evaluation => &self.evaluation,
        }
    }

    fn fewshot(&self, env: EnvKind) -> &str {
        match env {
            EnvKind::WikiQa => &self.fewshot_wiki,
            EnvKind::MockShop => &self.fewshot_shop,
            EnvKind::CodeTasks => &self.fewshot_code,
        }
    }
}

/// Assembles phase prompts from the environment preamble and the agent path.
#[derive(Debug, Clone)]
pub struct PromptBuilder {
    pub templates: PromptTemplates,
    pub temperatures: PhaseTemperatures,
    pub max_tokens: u32,
    pub env: EnvKind,
}

impl PromptBuilder {
    pub fn new(env: EnvKind) -> Self {
        Self {
            templates: PromptTemplates::default(),
            temperatures: PhaseTemperatures::default(),
            max_tokens: 1024,
            env,
        }
    }

    /// `path` holds the completed contexts of the new agent's ancestors,
    /// root first; `extras` is the new agent's own material so far.
    pub fn build(&self, phase: Phase, env_preamble: &str, path: &[AgentContext], extras: &str) -> ChatRequest {
        let system = format!(
            "{}\n\n{}",
            env_preamble.trim_end(),
            self.templates.fewshot(self.env).trim_end()
        );
        let mut user = String::new();
        for (depth, ctx) in path.iter().enumerate() {
            user.push_str(&format!("### Agent at depth {depth}\n{}\n\n", ctx.context_text()));
        }
        if !extras.is_empty() {
            user.push_str(&format!("### Current agent\n{}\n\n", extras.trim_end()));
        }
        user.push_str(self.templates.instruction(phase).trim_end());
        ChatRequest {
            messages: vec![Message::system(system), Message::user(user)],
            temperature: self.temperatures.for_phase(phase),
            max_tokens: self.max_tokens,
            phase,
        }
    }
}

/// The current agent's solution, optionally followed by its validation.
pub fn current_agent_block(ctx: &AgentContext, with_validation: bool) -> String {
    let mut block = ctx.solution_text();
    if with_validation {
        block.push_str(&format!("\nValidation: {}", ctx.validation));
    }
    block
}
