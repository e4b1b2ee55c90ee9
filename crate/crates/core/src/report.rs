//! Per-task summary rows and batch aggregates.

use serde::{Deserialize, Serialize};

use crate::orchestrator::TaskRecord;
use crate::trace::AnswerSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub task_id: String,
    pub grade: Option<f64>,
    pub passed: bool,
    /// `None` when the run aborted.
    pub source: Option<AnswerSource>,
    pub expansions: u32,
    pub tokens_total: u64,
    pub error: Option<String>,
}

impl SummaryRow {
    pub fn from_record(record: &TaskRecord) -> Self {
        match &record.outcome {
            Ok(r) => Self {
                task_id: record.task_id.clone(),
                grade: record.grade,
                passed: r.passed,
                source: Some(r.source),
                expansions: r.expansions_used,
                tokens_total: r.ledger.total,
                error: None,
            },
            Err(abort) => Self {
                task_id: record.task_id.clone(),
                grade: None,
                passed: false,
                source: None,
                expansions: 0,
                tokens_total: record.tokens(),
                error: Some(abort.error.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub tasks: usize,
    pub aborted: usize,
    /// Mean over tasks that received a grade.
    pub mean_grade: Option<f64>,
    /// Fraction of all tasks that ended on a passing terminal.
    pub pass_rate: f64,
    pub mean_tokens: f64,
}

pub fn summarize(records: &[TaskRecord]) -> Summary {
    let rows: Vec<SummaryRow> = records.iter().map(SummaryRow::from_record).collect();
    let tasks = rows.len();
    let grades: Vec<f64> = rows.iter().filter_map(|r| r.grade).collect();
    let mean = |sum: f64, count: usize| if count == 0 { 0.0 } else { sum / count as f64 };
    Summary {
        tasks,
        aborted: rows.iter().filter(|r| r.error.is_some()).count(),
        mean_grade: (!grades.is_empty()).then(|| mean(grades.iter().sum(), grades.len())),
        pass_rate: mean(rows.iter().filter(|r| r.passed).count() as f64, tasks),
        mean_tokens: mean(rows.iter().map(|r| r.tokens_total as f64).sum(), tasks),
        rows,
    }
}

fn source_label(source: Option<AnswerSource>) -> &'static str {
    match source {
        Some(AnswerSource::EarlyTermination) => "early",
        Some(AnswerSource::FallbackBestTerminal) => "fallback",
        Some(AnswerSource::NoTerminal) => "no-terminal",
        None => "aborted",
    }
}

impl Summary {
    /// Plain-text table followed by the aggregate line.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.task_id.len()).max().unwrap_or(0).max(4);
        let mut out = format!(
            "{:<width$}  {:>6}  {:>6}  {:<11}  {:>10}  {:>8}\n",
            "task", "grade", "passed", "source", "expansions", "tokens"
        );
        for row in &self.rows {
            let grade = row.grade.map_or("-".to_string(), |g| format!("{g:.3}"));
            out.push_str(&format!(
                "{:<width$}  {:>6}  {:>6}  {:<11}  {:>10}  {:>8}\n",
                row.task_id,
                grade,
                row.passed,
                source_label(row.source),
                row.expansions,
                row.tokens_total
            ));
        }
        if self.tasks > 0 {
            let grade = self.mean_grade.map_or("-".to_string(), |g| format!("{g:.3}"));
            out.push_str(&format!(
                "tasks: {}  aborted: {}  mean grade: {grade}  pass rate: {:.3}  mean tokens: {:.1}\n",
                self.tasks, self.aborted, self.pass_rate, self.mean_tokens
            ));
        }
        out
    }
}
