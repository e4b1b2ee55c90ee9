use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    normalize_ws, parse_bracketed, words, EnvError, EnvKind, Fixtures, GroundTruth, StepOutcome,
    TaskEnvironment, TaskInstance,
};

/// Title-match similarity needed to open a page without an exact title.
const FUZZY_OPEN_THRESHOLD: f64 = 0.5;
const SIMILAR_LIMIT: usize = 5;

/// Page title to paragraphs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WikiCorpus {
    pub pages: BTreeMap<String, Vec<String>>,
}

impl WikiCorpus {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.pages.is_empty() {
            return Err(EnvError::Config("wiki corpus has no pages".into()));
        }
        for (title, paragraphs) in &self.pages {
            if paragraphs.iter().all(|p| p.trim().is_empty()) {
                return Err(EnvError::Config(format!("wiki page `{title}` has no text")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
struct Session {
    corpus: Arc<WikiCorpus>,
    page: Option<String>,
    lookup_keyword: Option<String>,
    lookup_cursor: usize,
}

/// Search/Lookup/Finish over a local corpus.
#[derive(Debug, Default)]
pub struct WikiEnv {
    session: Option<Session>,
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn sentences(paragraphs: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for p in paragraphs {
        let mut current = String::new();
        let mut chars = p.chars().peekable();
        while let Some(c) = chars.next() {
            current.push(c);
            if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace()) {
                let s = current.trim().to_string();
                if !s.is_empty() {
                    out.push(s);
                }
                current.clear();
            }
        }
        let s = current.trim().to_string();
        if !s.is_empty() {
            out.push(s);
        }
    }
    out
}

/// Lowercase, strip punctuation and articles, collapse whitespace.
pub(crate) fn normalize_answer(s: &str) -> String {
    words(s)
        .into_iter()
        .filter(|w| !matches!(w.as_str(), "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

impl WikiEnv {
    pub fn new() -> Self {
        Self::default()
    }

    fn session(&mut self) -> Result<&mut Session, EnvError> {
        self.session.as_mut().ok_or(EnvError::NotReset)
    }

    fn search(session: &mut Session, query: &str) -> String {
        let wanted = normalize_ws(query).to_lowercase();
        let exact = session
            .corpus
            .pages
            .keys()
            .find(|t| normalize_ws(t).to_lowercase() == wanted)
            .cloned();
        let query_words: BTreeSet<String> = words(query).into_iter().collect();
        let mut ranked: Vec<(f64, &String)> = session
            .corpus
            .pages
            .keys()
            .map(|t| (jaccard(&query_words, &words(t).into_iter().collect()), t))
            .filter(|(score, _)| *score > 0.0)
            .collect();
        // Stable sort keeps title order among equal scores.
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        let hit = exact.or_else(|| {
            ranked
                .first()
                .filter(|(score, _)| *score >= FUZZY_OPEN_THRESHOLD)
                .map(|(_, t)| (*t).clone())
        });
        match hit {
            Some(title) => {
                let first = session.corpus.pages[&title]
                    .iter()
                    .find(|p| !p.trim().is_empty())
                    .cloned()
                    .unwrap_or_default();
                session.page = Some(title);
                session.lookup_keyword = None;
                session.lookup_cursor = 0;
                first
            }
            None => {
                let similar: Vec<&str> = ranked
                    .iter()
                    .take(SIMILAR_LIMIT)
                    .map(|(_, t)| t.as_str())
                    .collect();
                format!("Could not find [{query}]. Similar: [{}].", similar.join(", "))
            }
        }
    }

    fn lookup(session: &mut Session, keyword: &str) -> String {
        let Some(title) = &session.page else {
            return "No page has been searched yet. Use Search[entity] first.".into();
        };
        let key = keyword.to_lowercase();
        if session.lookup_keyword.as_deref() != Some(key.as_str()) {
            session.lookup_keyword = Some(key.clone());
            session.lookup_cursor = 0;
        }
        let hits: Vec<String> = sentences(&session.corpus.pages[title])
            .into_iter()
            .filter(|s| s.to_lowercase().contains(&key))
            .collect();
        if session.lookup_cursor >= hits.len() {
            return "No more results.".into();
        }
        let idx = session.lookup_cursor;
        session.lookup_cursor += 1;
        format!("(Result {} / {}) {}", idx + 1, hits.len(), hits[idx])
    }
}

impl TaskEnvironment for WikiEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::WikiQa
    }

    fn reset(&mut self, task: &TaskInstance) -> Result<String, EnvError> {
        let Fixtures::Wiki(corpus) = &task.fixtures else {
            return Err(EnvError::Config(format!("task {} has no wiki corpus", task.id)));
        };
        corpus.validate()?;
        self.session = Some(Session {
            corpus: Arc::clone(corpus),
            ..Default::default()
        });
        Ok(format!(
            "Solve a question answering task with interleaving Thought, Action, Observation steps. \
Action can be three types:\n\
(1) Search[entity], which searches the exact entity in the encyclopedia and returns the first paragraph if it exists. If not, it returns some similar entities to search.\n\
(2) Lookup[keyword], which returns the next sentence containing keyword in the current page.\n\
(3) Finish[answer], which returns the answer and finishes the task.\n\
Question: {}",
            task.instruction
        ))
    }

    fn execute(&mut self, action: &str) -> Result<StepOutcome, EnvError> {
        let session = self.session()?;
        let Some((verb, arg)) = parse_bracketed(action) else {
            return Ok(StepOutcome::plain(format!(
                "Invalid action: `{}`. Use Search[entity], Lookup[keyword] or Finish[answer].",
                action.trim()
            )));
        };
        let outcome = match verb.to_ascii_lowercase().as_str() {
            "search" => StepOutcome::plain(Self::search(session, &arg)),
            "lookup" => StepOutcome::plain(Self::lookup(session, &arg)),
            "finish" => StepOutcome {
                observation: format!("Answer submitted: {arg}"),
                terminal_detected: true,
                objective_score: None,
                answer: Some(arg),
            },
            _ => StepOutcome::plain(format!(
                "Invalid action: `{verb}` is not one of Search, Lookup, Finish."
            )),
        };
        Ok(outcome)
    }

    fn grade(&mut self, task: &TaskInstance, final_answer: &str) -> Result<f64, EnvError> {
        match &task.ground_truth {
            Some(GroundTruth::Answer(truth)) => {
                Ok(if normalize_answer(truth) == normalize_answer(final_answer) { 1.0 } else { 0.0 })
            }
            Some(_) => Err(EnvError::Grading(format!("task {} has a non-text ground truth", task.id))),
            None => Err(EnvError::Grading(format!("task {} has no ground truth", task.id))),
        }
    }

    fn fork(&self) -> Box<dyn TaskEnvironment> {
        Box::new(WikiEnv::new())
    }
}
