use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{EnvError, EnvKind, Fixtures, GroundTruth, StepOutcome, TaskEnvironment, TaskInstance};

const HARNESS: &str = include_str!("../../data/sandbox_harness.py");
const POLL: Duration = Duration::from_millis(5);

/// How candidate code is executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxConfig {
    /// Interpreter program followed by its fixed arguments.
    pub interpreter: Vec<String>,
    pub timeout_secs: f64,
    /// Parent directory for run workspaces; a temporary directory when unset.
    pub workspace: Option<PathBuf>,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            interpreter: vec!["python3".into(), "-I".into()],
            timeout_secs: 10.0,
            workspace: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statement: String,
    pub passed: bool,
    /// Actual value or error text for a failed test.
    pub output: Option<String>,
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub tests: Vec<TestOutcome>,
    pub load_error: Option<String>,
    pub timed_out: bool,
}

impl TestReport {
    pub fn passed(&self) -> usize {
        self.tests.iter().filter(|t| t.passed).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.tests.is_empty() {
            return 0.0;
        }
        self.passed() as f64 / self.tests.len() as f64
    }

    /// Summary in the "Tests passed / Tests failed / Passed x out of y" layout.
    pub fn observation(&self) -> String {
        let total = self.tests.len();
        let passed = self.passed();
        let mut out = String::new();
        if let Some(err) = &self.load_error {
            out.push_str(&format!("Code failed to load: {err}\n"));
        }
        out.push_str("Tests passed:\n");
        for t in self.tests.iter().filter(|t| t.passed) {
            out.push_str(&format!("{}\n", t.statement));
        }
        out.push_str("Tests failed:\n");
        for t in self.tests.iter().filter(|t| !t.passed) {
            match &t.output {
                Some(o) => out.push_str(&format!("{} while output: {o}\n", t.statement)),
                None => out.push_str(&format!("{}\n", t.statement)),
            }
        }
        out.push_str(&format!(
            "Passed {passed} out of {total} tests. Failed {} out of {total} tests.",
            total - passed
        ));
        if self.timed_out {
            out.push_str(" Execution timed out.");
        }
        out
    }
}

#[derive(Deserialize)]
struct HarnessRecord {
    #[serde(default)]
    index: Option<usize>,
    #[serde(default)]
    passed: bool,
    #[serde(default)]
    output: Option<String>,
    #[serde(default)]
    load_error: Option<String>,
}

/// Strips a surrounding Markdown code fence, if any.
pub(crate) fn extract_code(action: &str) -> String {
    let trimmed = action.trim();
    if let Some(start) = trimmed.find("```") {
        let after = &trimmed[start + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        let end = body.find("```").unwrap_or(body.len());
        return body[..end].trim_end().to_string();
    }
    trimmed.to_string()
}

/// Runs candidate code against assert statements in a child process.
#[derive(Debug)]
pub struct Sandbox {
    config: SandboxConfig,
    root: PathBuf,
    _temp: Option<tempfile::TempDir>,
    runs: u64,
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Result<Self, EnvError> {
        if config.interpreter.is_empty() {
            return Err(EnvError::Config("sandbox interpreter command is empty".into()));
        }
        if config.timeout_secs.is_nan() || config.timeout_secs <= 0.0 {
            return Err(EnvError::Config("sandbox timeout must be positive".into()));
        }
        let (root, temp) = match &config.workspace {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                (dir.clone(), None)
            }
            None => {
                let temp = tempfile::Builder::new().prefix("treeplan-sandbox").tempdir()?;
                (temp.path().to_path_buf(), Some(temp))
            }
        };
        Ok(Self { config, root, _temp: temp, runs: 0 })
    }

    pub fn run(&mut self, code: &str, tests: &[String]) -> Result<TestReport, EnvError> {
        self.runs += 1;
        let dir = self.root.join(format!("run-{:05}", self.runs));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("candidate.py"), code)?;
        fs::write(
            dir.join("tests.json"),
            serde_json::to_string(tests).expect("strings serialize"),
        )?;
        fs::write(dir.join("harness.py"), HARNESS)?;

        let timed_out = self.spawn_and_wait(&dir)?;
        let records = read_records(&dir.join("results.jsonl"))?;

        let mut report = TestReport {
            tests: tests
                .iter()
                .map(|t| TestOutcome {
                    statement: t.clone(),
                    passed: false,
                    output: Some(if timed_out { "timeout".into() } else { "no result".into() }),
                    timed_out,
                })
                .collect(),
            load_error: None,
            timed_out,
        };
        for rec in records {
            if let Some(err) = rec.load_error {
                for t in &mut report.tests {
                    t.output = Some(err.clone());
                    t.timed_out = false;
                }
                report.load_error = Some(err);
                continue;
            }
            if let Some(slot) = rec.index.and_then(|i| report.tests.get_mut(i)) {
                slot.passed = rec.passed;
                slot.output = if rec.passed { None } else { rec.output };
                slot.timed_out = false;
            }
        }
        Ok(report)
    }

    /// Returns whether the process had to be killed.
    fn spawn_and_wait(&self, dir: &Path) -> Result<bool, EnvError> {
        let (program, args) = self.config.interpreter.split_first().expect("checked in new");
        let mut cmd = Command::new(program);
        cmd.args(args)
            .arg("harness.py")
            .current_dir(dir)
            .env_clear()
            .env("HOME", dir)
            .stdin(Stdio::null())
            .stdout(fs::File::create(dir.join("stdout.txt"))?)
            .stderr(fs::File::create(dir.join("stderr.txt"))?);
        if let Some(path) = std::env::var_os("PATH") {
            cmd.env("PATH", path);
        }
        let mut child = cmd
            .spawn()
            .map_err(|e| EnvError::Config(format!("cannot start sandbox interpreter `{program}`: {e}")))?;
        let deadline = Instant::now() + Duration::from_secs_f64(self.config.timeout_secs);
        loop {
            if child.try_wait()?.is_some() {
                return Ok(false);
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                return Ok(true);
            }
            std::thread::sleep(POLL);
        }
    }
}

fn read_records(path: &Path) -> Result<Vec<HarnessRecord>, EnvError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    // A killed process may leave a torn final line.
    Ok(text
        .lines()
        .filter_map(|l| serde_json::from_str::<HarnessRecord>(l).ok())
        .collect())
}

/// Programming tasks checked by executing assert statements.
#[derive(Debug)]
pub struct CodeEnv {
    config: SandboxConfig,
    sandbox: Option<Sandbox>,
    tests: Option<Vec<String>>,
}

impl CodeEnv {
    pub fn new(config: SandboxConfig) -> Self {
        Self { config, sandbox: None, tests: None }
    }

    fn sandbox(&mut self) -> Result<&mut Sandbox, EnvError> {
        if self.sandbox.is_none() {
            self.sandbox = Some(Sandbox::new(self.config.clone())?);
        }
        Ok(self.sandbox.as_mut().expect("just set"))
    }

    pub fn run_tests(&mut self, code: &str, tests: &[String]) -> Result<TestReport, EnvError> {
        self.sandbox()?.run(code, tests)
    }
}

impl TaskEnvironment for CodeEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::CodeTasks
    }

    fn reset(&mut self, task: &TaskInstance) -> Result<String, EnvError> {
        let Fixtures::Code(tests) = &task.fixtures else {
            return Err(EnvError::Config(format!("task {} has no test list", task.id)));
        };
        if tests.is_empty() {
            return Err(EnvError::Config(format!("task {} has an empty test list", task.id)));
        }
        self.sandbox()?;
        self.tests = Some(tests.clone());
        Ok(format!(
            "Solve a Python programming problem. Your Action must be the complete code of a solution; \
it is executed against the test cases and the results are reported as the Observation.\n\
Problem: {}\nTest cases:\n{}",
            task.instruction,
            tests.join("\n")
        ))
    }

    fn execute(&mut self, action: &str) -> Result<StepOutcome, EnvError> {
        let tests = self.tests.clone().ok_or(EnvError::NotReset)?;
        let code = extract_code(action);
        let report = self.run_tests(&code, &tests)?;
        Ok(StepOutcome {
            observation: report.observation(),
            terminal_detected: true,
            objective_score: Some(report.fraction()),
            answer: Some(code),
        })
    }

    fn grade(&mut self, task: &TaskInstance, final_answer: &str) -> Result<f64, EnvError> {
        let Some(GroundTruth::Tests(tests)) = &task.ground_truth else {
            return Err(EnvError::Grading(format!("task {} has no hidden tests", task.id)));
        };
        if tests.is_empty() {
            return Err(EnvError::Grading(format!("task {} has an empty hidden test list", task.id)));
        }
        Ok(self.run_tests(&extract_code(final_answer), tests)?.fraction())
    }

    fn fork(&self) -> Box<dyn TaskEnvironment> {
        Box::new(CodeEnv::new(self.config.clone()))
    }

    /// Code candidates are independent, so there is no path state to rebuild.
    fn restore_path(&mut self, task: &TaskInstance, _actions: &[&str]) -> Result<String, EnvError> {
        self.reset(task)
    }
}
