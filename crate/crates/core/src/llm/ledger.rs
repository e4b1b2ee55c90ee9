use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ChatResponse, Phase};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTokens {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl PhaseTokens {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Token usage of one task, itemized by phase.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    pub phases: BTreeMap<Phase, PhaseTokens>,
    pub total: u64,
}

impl TokenLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, phase: Phase, response: &ChatResponse) {
        let entry = self.phases.entry(phase).or_default();
        entry.calls += 1;
        entry.prompt_tokens += response.prompt_tokens;
        entry.completion_tokens += response.completion_tokens;
        self.total += response.total_tokens();
    }

    pub fn merge(&mut self, other: &TokenLedger) {
        for (phase, tokens) in &other.phases {
            let entry = self.phases.entry(*phase).or_default();
            entry.calls += tokens.calls;
            entry.prompt_tokens += tokens.prompt_tokens;
            entry.completion_tokens += tokens.completion_tokens;
        }
        self.total += other.total;
    }

    pub fn calls(&self) -> u64 {
        self.phases.values().map(|p| p.calls).sum()
    }

    pub fn phase_total(&self, phase: Phase) -> u64 {
        self.phases.get(&phase).map_or(0, PhaseTokens::total)
    }
}
