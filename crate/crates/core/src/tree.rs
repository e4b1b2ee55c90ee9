//! The reasoning tree: agent storage, UCT selection, failure backpropagation
//! and fallback lookup.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::uct::{self, DomainError, RewardStats, UctVariant};

pub type NodeId = u64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("unknown node id {0}")]
    NotFound(NodeId),
    #[error("invalid tree state: {0}")]
    State(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("every candidate node is terminal")]
    Exhausted,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// The texts an agent produces across its phases.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentContext {
    pub thought: String,
    pub action: String,
    pub observation: String,
    pub validation: String,
    pub assessment: String,
}

impl AgentContext {
    /// Thought, action and observation rendered as one block.
    pub fn solution_text(&self) -> String {
        format!(
            "Thought: {}\nAction: {}\nObservation: {}",
            self.thought, self.action, self.observation
        )
    }

    /// Solution plus validation and assessment.
    pub fn context_text(&self) -> String {
        format!(
            "{}\nValidation: {}\nAssessment: {}",
            self.solution_text(),
            self.validation,
            self.assessment
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub depth: u32,
    pub created_seq: u64,
    pub context: AgentContext,
    pub stats: RewardStats,
    pub terminal: bool,
    /// Evaluation verdict; present exactly when `terminal` is set.
    pub passed: Option<bool>,
    /// Final answer extracted from a terminal action.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

impl AgentNode {
    pub fn is_failed_terminal(&self) -> bool {
        self.terminal && self.passed == Some(false)
    }

    /// Current reward estimate: weighted Q once backpropagated, else `r0`.
    pub fn reward_estimate(&self) -> f64 {
        uct::q_weighted(&self.stats).unwrap_or(self.stats.r0)
    }
}

/// Which nodes `select_with_uct` may return.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eligibility {
    /// Only non-terminal agents.
    #[default]
    NonTerminal,
    /// Non-terminal agents plus terminals that failed evaluation, so a
    /// rejected candidate can be refined by children.
    IncludeFailedTerminals,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTree {
    nodes: Vec<AgentNode>,
    next_seq: u64,
}

impl ReasoningTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> Option<NodeId> {
        self.nodes.first().map(|n| n.id)
    }

    pub fn node(&self, id: NodeId) -> Result<&AgentNode, TreeError> {
        self.nodes.get(id as usize).ok_or(TreeError::NotFound(id))
    }

    /// Nodes in creation order.
    pub fn nodes(&self) -> &[AgentNode] {
        &self.nodes
    }

    fn push(&mut self, parent: Option<NodeId>, depth: u32, context: AgentContext, stats: RewardStats,
            terminal: bool, passed: Option<bool>) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(AgentNode {
            id,
            parent,
            children: Vec::new(),
            depth,
            created_seq: self.next_seq,
            context,
            stats,
            terminal,
            passed,
            answer: None,
        });
        self.next_seq += 1;
        id
    }

    pub fn add_root(&mut self, context: AgentContext, stats: RewardStats) -> Result<NodeId, TreeError> {
        if !self.nodes.is_empty() {
            return Err(TreeError::State("tree already has a root".into()));
        }
        stats.validate()?;
        Ok(self.push(None, 0, context, stats, false, None))
    }

    pub fn add_child(
        &mut self,
        parent: NodeId,
        context: AgentContext,
        stats: RewardStats,
        terminal: bool,
        passed: Option<bool>,
    ) -> Result<NodeId, TreeError> {
        let depth = self.node(parent)?.depth + 1;
        if terminal != passed.is_some() {
            return Err(TreeError::Contract(format!(
                "passed must be supplied iff terminal (terminal={terminal}, passed={passed:?})"
            )));
        }
        stats.validate()?;
        let id = self.push(Some(parent), depth, context, stats, terminal, passed);
        self.nodes[parent as usize].children.push(id);
        Ok(id)
    }

    /// Marks a node terminal with its evaluation verdict. Used for the root,
    /// which is created before its verdict is known.
    pub fn mark_terminal(&mut self, id: NodeId, passed: bool) -> Result<(), TreeError> {
        let node = self.node_mut(id)?;
        node.terminal = true;
        node.passed = Some(passed);
        Ok(())
    }

    pub fn set_answer(&mut self, id: NodeId, answer: Option<String>) -> Result<(), TreeError> {
        self.node_mut(id)?.answer = answer;
        Ok(())
    }

    fn node_mut(&mut self, id: NodeId) -> Result<&mut AgentNode, TreeError> {
        self.nodes.get_mut(id as usize).ok_or(TreeError::NotFound(id))
    }

    /// Parent's backprop count, or the node's own for the root.
    fn parent_n(&self, node: &AgentNode) -> u64 {
        match node.parent {
            Some(p) => self.nodes[p as usize].stats.n,
            None => node.stats.n,
        }
    }

    pub fn uct_of(&self, id: NodeId, variant: UctVariant) -> Result<f64, TreeError> {
        let node = self.node(id)?;
        Ok(uct::uct(&node.stats, self.parent_n(node), variant)?)
    }

    /// Highest-UCT eligible node; ties go to the earliest created.
    pub fn select_with_uct(&self, variant: UctVariant) -> Result<NodeId, TreeError> {
        self.select_with_eligibility(variant, Eligibility::NonTerminal)
    }

    pub fn select_with_eligibility(
        &self,
        variant: UctVariant,
        eligibility: Eligibility,
    ) -> Result<NodeId, TreeError> {
        let mut best: Option<(f64, u64, NodeId)> = None;
        for node in &self.nodes {
            let eligible = match eligibility {
                Eligibility::NonTerminal => !node.terminal,
                Eligibility::IncludeFailedTerminals => node.passed != Some(true),
            };
            if !eligible {
                continue;
            }
            let score = uct::uct(&node.stats, self.parent_n(node), variant)?;
            let better = match best {
                None => true,
                Some((s, seq, _)) => score > s || (score == s && node.created_seq < seq),
            };
            if better {
                best = Some((score, node.created_seq, node.id));
            }
        }
        best.map(|(_, _, id)| id).ok_or(TreeError::Exhausted)
    }

    /// Pushes a failed terminal's initial reward into every proper ancestor.
    pub fn backpropagate(&mut self, failed_terminal: NodeId) -> Result<(), TreeError> {
        let node = self.node(failed_terminal)?;
        if !node.is_failed_terminal() {
            return Err(TreeError::Contract(format!(
                "node {failed_terminal} is not a terminal that failed evaluation"
            )));
        }
        let reward = node.stats.r0;
        let mut cursor = node.parent;
        while let Some(id) = cursor {
            let ancestor = &mut self.nodes[id as usize];
            ancestor.stats.absorb(reward);
            cursor = ancestor.parent;
        }
        Ok(())
    }

    /// Terminal node with the highest reward estimate.
    pub fn best_terminal(&self) -> Option<NodeId> {
        argmax_by(self.nodes.iter().filter(|n| n.terminal), |n| n.reward_estimate())
    }

    /// Leaf with the highest initial reward, preferring deeper leaves on ties.
    pub fn best_leaf(&self) -> Option<NodeId> {
        let mut best: Option<&AgentNode> = None;
        for node in self.nodes.iter().filter(|n| n.children.is_empty()) {
            best = match best {
                None => Some(node),
                Some(b) => {
                    let better = node.stats.r0 > b.stats.r0
                        || (node.stats.r0 == b.stats.r0 && node.depth > b.depth);
                    Some(if better { node } else { b })
                }
            };
        }
        best.map(|n| n.id)
    }

    /// Root-to-node path, inclusive.
    pub fn path(&self, id: NodeId) -> Result<Vec<NodeId>, TreeError> {
        let mut path = vec![id];
        let mut cursor = self.node(id)?.parent;
        while let Some(p) = cursor {
            path.push(p);
            cursor = self.nodes[p as usize].parent;
        }
        path.reverse();
        Ok(path)
    }

    pub fn path_context(&self, id: NodeId) -> Result<Vec<AgentContext>, TreeError> {
        Ok(self
            .path(id)?
            .into_iter()
            .map(|p| self.nodes[p as usize].context.clone())
            .collect())
    }

    /// Checks structural invariants and the backprop-count accounting.
    pub fn check_invariants(&self) -> Result<(), TreeError> {
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.id != idx as NodeId {
                return Err(TreeError::State(format!("node at {idx} has id {}", node.id)));
            }
            if node.terminal != node.passed.is_some() {
                return Err(TreeError::State(format!("node {idx}: passed/terminal mismatch")));
            }
            match node.parent {
                None if idx != 0 => {
                    return Err(TreeError::State(format!("node {idx} has no parent")))
                }
                None => {
                    if node.depth != 0 {
                        return Err(TreeError::State("root depth must be 0".into()));
                    }
                }
                Some(p) => {
                    let parent = self.node(p)?;
                    if p >= node.id || !parent.children.contains(&node.id) {
                        return Err(TreeError::State(format!("node {idx}: broken parent link")));
                    }
                    if node.depth != parent.depth + 1 {
                        return Err(TreeError::State(format!("node {idx}: bad depth")));
                    }
                    if node.stats.n > parent.stats.n {
                        return Err(TreeError::State(format!("node {idx}: n exceeds parent's")));
                    }
                }
            }
            for pair in node.children.windows(2) {
                if self.node(pair[0])?.created_seq >= self.node(pair[1])?.created_seq {
                    return Err(TreeError::State(format!("node {idx}: children out of order")));
                }
            }
            let expected = self.failed_descendants(node.id);
            if node.stats.n != expected {
                return Err(TreeError::State(format!(
                    "node {idx}: n={} but {} failed terminal descendants",
                    node.stats.n, expected
                )));
            }
        }
        Ok(())
    }

    fn failed_descendants(&self, id: NodeId) -> u64 {
        let mut count = 0;
        let mut stack: Vec<NodeId> = self.nodes[id as usize].children.clone();
        while let Some(c) = stack.pop() {
            let child = &self.nodes[c as usize];
            if child.is_failed_terminal() {
                count += 1;
            }
            stack.extend(child.children.iter().copied());
        }
        count
    }
}

fn argmax_by<'a>(nodes: impl Iterator<Item = &'a AgentNode>, key: impl Fn(&AgentNode) -> f64) -> Option<NodeId> {
    let mut best: Option<(f64, &AgentNode)> = None;
    for node in nodes {
        let k = key(node);
        match best {
            Some((bk, b)) if !(k > bk || (k == bk && node.created_seq < b.created_seq)) => {}
            _ => best = Some((k, node)),
        }
    }
    best.map(|(_, n)| n.id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(action: &str) -> AgentContext {
        AgentContext {
            action: action.into(),
            ..Default::default()
        }
    }

    fn fresh(r0: f64, c0: f64) -> RewardStats {
        RewardStats::new(r0, c0).unwrap()
    }

    #[test]
    fn root_creation() {
        let mut tree = ReasoningTree::new();
        let root = tree.add_root(ctx("Search[x]"), fresh(0.3, 0.9)).unwrap();
        assert_eq!(root, 0);
        let node = tree.node(root).unwrap();
        assert_eq!(node.depth, 0);
        assert_eq!(node.stats.n, 0);
        assert!(node.children.is_empty());
        assert!(matches!(
            tree.add_root(ctx("again"), fresh(0.3, 0.9)),
            Err(TreeError::State(_))
        ));
    }

    #[test]
    fn children_in_creation_order() {
        let mut tree = ReasoningTree::new();
        let root = tree.add_root(ctx("r"), fresh(0.3, 0.9)).unwrap();
        let a1 = tree.add_child(root, ctx("a1"), fresh(0.8, 0.7), false, None).unwrap();
        let a2 = tree.add_child(root, ctx("a2"), fresh(0.6, 0.9), false, None).unwrap();
        assert_eq!((a1, a2), (1, 2));
        assert_eq!(tree.node(root).unwrap().children, vec![1, 2]);
        assert_eq!(tree.node(a2).unwrap().depth, 1);
    }

    #[test]
    fn add_child_contract_errors() {
        let mut tree = ReasoningTree::new();
        let root = tree.add_root(ctx("r"), fresh(0.3, 0.9)).unwrap();
        assert!(matches!(
            tree.add_child(root, ctx("x"), fresh(0.5, 0.5), false, Some(true)),
            Err(TreeError::Contract(_))
        ));
        assert!(matches!(
            tree.add_child(root, ctx("x"), fresh(0.5, 0.5), true, None),
            Err(TreeError::Contract(_))
        ));
        assert_eq!(
            tree.add_child(9, ctx("x"), fresh(0.5, 0.5), false, None),
            Err(TreeError::NotFound(9))
        );
        let failed = tree.add_child(root, ctx("Finish[x]"), fresh(0.2, 0.7), true, Some(false)).unwrap();
        assert!(tree.node(failed).unwrap().is_failed_terminal());
    }

    #[test]
    fn backprop_chain() {
        let mut tree = ReasoningTree::new();
        let root = tree.add_root(ctx("r"), fresh(0.3, 0.9)).unwrap();
        let a1 = tree.add_child(root, ctx("a1"), fresh(0.8, 0.7), false, None).unwrap();
        let a3 = tree.add_child(a1, ctx("Finish[w]"), fresh(0.2, 0.7), true, Some(false)).unwrap();
        tree.backpropagate(a3).unwrap();
        for id in [root, a1] {
            let s = tree.node(id).unwrap().stats;
            assert_eq!(s.n, 1);
            assert_eq!(s.reward_sum, 0.2);
        }
        assert_eq!(tree.node(a3).unwrap().stats.n, 0);
        assert_eq!(tree.node(a3).unwrap().stats.reward_sum, 0.0);
        tree.check_invariants().unwrap();
    }

    #[test]
    fn two_failures_under_one_parent() {
        let mut tree = ReasoningTree::new();
        let root = tree.add_root(ctx("r"), fresh(0.3, 0.9)).unwrap();
        let a1 = tree.add_child(root, ctx("a1"), fresh(0.8, 0.7), false, None).unwrap();
        let t1 = tree.add_child(a1, ctx("Finish[a]"), fresh(0.2, 0.7), true, Some(false)).unwrap();
        let t2 = tree.add_child(a1, ctx("Finish[b]"), fresh(0.1, 0.7), true, Some(false)).unwrap();
        tree.backpropagate(t1).unwrap();
        tree.backpropagate(t2).unwrap();
        assert_eq!(tree.node(a1).unwrap().stats.n, 2);
        assert_eq!(tree.node(root).unwrap().stats.n, 2);
        tree.check_invariants().unwrap();
    }

    #[test]
    fn backprop_rejects_non_failed_nodes() {
        let mut tree = ReasoningTree::new();
        let root = tree.add_root(ctx("r"), fresh(0.3, 0.9)).unwrap();
        let ok = tree.add_child(root, ctx("Finish[a]"), fresh(1.0, 0.9), true, Some(true)).unwrap();
        let mid = tree.add_child(root, ctx("Search[a]"), fresh(0.5, 0.9), false, None).unwrap();
        assert!(matches!(tree.backpropagate(ok), Err(TreeError::Contract(_))));
        assert!(matches!(tree.backpropagate(mid), Err(TreeError::Contract(_))));
    }

    #[test]
    fn selection_basics() {
        let mut tree = ReasoningTree::new();
        let root = tree.add_root(ctx("r"), fresh(0.3, 0.9)).unwrap();
        assert_eq!(tree.select_with_uct(UctVariant::Full).unwrap(), root);
        tree.mark_terminal(root, false).unwrap();
        assert_eq!(tree.select_with_uct(UctVariant::Full), Err(TreeError::Exhausted));
        assert_eq!(
            tree.select_with_eligibility(UctVariant::Full, Eligibility::IncludeFailedTerminals).unwrap(),
            root
        );
    }

    #[test]
    fn ties_go_to_earliest_created() {
        // Both insertion orders of identical siblings pick whichever came first.
        for labels in [["a", "b"], ["b", "a"]] {
            let mut tree = ReasoningTree::new();
            let root = tree.add_root(ctx("r"), fresh(0.1, 0.9)).unwrap();
            for label in labels {
                tree.add_child(root, ctx(label), fresh(0.6, 0.5), false, None).unwrap();
            }
            let picked = tree.select_with_uct(UctVariant::Full).unwrap();
            assert_eq!(tree.node(picked).unwrap().context.action, labels[0]);
        }
        let mut tree = ReasoningTree::new();
        let root = tree.add_root(ctx("r"), fresh(0.6, 0.5)).unwrap();
        let _a = tree.add_child(root, ctx("a"), fresh(0.6, 0.5), false, None).unwrap();
        assert_eq!(tree.select_with_uct(UctVariant::Full).unwrap(), root);
    }

    #[test]
    fn comedienne_selection_flip() {
        let mut tree = ReasoningTree::new();
        let root = tree.add_root(ctx("r"), fresh(0.3, 0.9)).unwrap();
        assert_eq!(tree.select_with_uct(UctVariant::Full).unwrap(), root);
        let a1 = tree.add_child(root, ctx("a1"), fresh(0.8, 0.7), false, None).unwrap();
        let a2 = tree.add_child(root, ctx("a2"), fresh(0.7, 0.8), false, None).unwrap();
        assert_eq!(tree.select_with_uct(UctVariant::Full).unwrap(), a1);
        let a3 = tree.add_child(a1, ctx("Finish[w]"), fresh(0.2, 0.7), true, Some(false)).unwrap();
        tree.backpropagate(a3).unwrap();
        tree.add_child(a1, ctx("a4"), fresh(0.5, 0.8), false, None).unwrap();
        assert!(tree.uct_of(a1, UctVariant::Full).unwrap() < tree.uct_of(a2, UctVariant::Full).unwrap());
        assert_eq!(tree.select_with_uct(UctVariant::Full).unwrap(), a2);
    }

    #[test]
    fn best_terminal_cases() {
        let mut tree = ReasoningTree::new();
        let root = tree.add_root(ctx("r"), fresh(0.3, 0.9)).unwrap();
        assert_eq!(tree.best_terminal(), None);
        let _lo = tree.add_child(root, ctx("Finish[a]"), fresh(0.2, 0.9), true, Some(false)).unwrap();
        let hi = tree.add_child(root, ctx("Finish[b]"), fresh(0.6, 0.9), true, Some(false)).unwrap();
        assert_eq!(tree.best_terminal(), Some(hi));

        // 0.9 (unvisited) against 0.1*0.5 + 0.9*0.95 = 0.905.
        let mut tree = ReasoningTree::new();
        let root = tree.add_root(ctx("r"), fresh(0.3, 0.9)).unwrap();
        let _a = tree.add_child(root, ctx("Finish[a]"), fresh(0.9, 0.9), true, Some(false)).unwrap();
        let b = tree
            .add_child(root, ctx("Finish[b]"), RewardStats::with_history(0.5, 0.1, 0.95, 1).unwrap(), true, Some(false))
            .unwrap();
        assert_eq!(tree.best_terminal(), Some(b));
    }

    #[test]
    fn path_contexts() {
        let mut tree = ReasoningTree::new();
        let root = tree.add_root(ctx("r"), fresh(0.3, 0.9)).unwrap();
        assert_eq!(tree.path_context(root).unwrap(), vec![ctx("r")]);
        let a1 = tree.add_child(root, ctx("a1"), fresh(0.8, 0.7), false, None).unwrap();
        let _a2 = tree.add_child(root, ctx("a2"), fresh(0.6, 0.9), false, None).unwrap();
        let a3 = tree.add_child(a1, ctx("a3"), fresh(0.2, 0.7), true, Some(false)).unwrap();
        assert_eq!(tree.path_context(a3).unwrap(), vec![ctx("r"), ctx("a1"), ctx("a3")]);
        assert_eq!(tree.path_context(42), Err(TreeError::NotFound(42)));
    }
}
