//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{parse_backend, FileConfig};
use crate::env::{load_tasks, EnvError, EnvKind};
use crate::llm::GatewayError;
use crate::orchestrator::{run_batch, RunConfig, RunError};
use crate::report::summarize;
use crate::trace::export_trace;
use crate::uct::UctVariant;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_GATEWAY: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "treeplan", version, about = "Tree search over LLM agents with UCT selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run tasks and write a summary plus one trace per task.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// wiki, shop or code.
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// Run only this task.
    #[arg(long)]
    pub task_id: Option<String>,
    /// `http` or `replay:PATH`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub branches: Option<u32>,
    #[arg(long)]
    pub max_expansions: Option<u32>,
    /// full, fixed, noexp, initial, original or lambda:VALUE.
    #[arg(long)]
    pub uct: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Results JSON path: one summary row per task.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Decide code-task success from the visible tests.
    #[arg(long, value_enum)]
    pub objective_eval: Option<Toggle>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub parallel_siblings: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Config(_) => EXIT_CONFIG,
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        Self::Config(e.to_string())
    }
}

/// A fully resolved `run` invocation.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub config: RunConfig,
    pub tasks: PathBuf,
    pub task_id: Option<String>,
    pub out: Option<PathBuf>,
    pub trace_dir: Option<PathBuf>,
}

pub fn resolve(args: &RunArgs) -> Result<Invocation, CliError> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path).map_err(CliError::Config)?,
        None => FileConfig::default(),
    };
    let env: EnvKind = args
        .env
        .clone()
        .or(file.env.clone())
        .ok_or_else(|| CliError::Usage("--env is required".into()))?
        .parse()
        .map_err(CliError::Usage)?;
    let tasks = args
        .tasks
        .clone()
        .or(file.tasks.clone())
        .ok_or_else(|| CliError::Usage("--tasks is required".into()))?;
    let backend_spec = args
        .backend
        .clone()
        .or(file.backend.clone())
        .ok_or_else(|| CliError::Usage("--backend is required".into()))?;
    let backend = parse_backend(&backend_spec, file.http_config()).map_err(CliError::Usage)?;

    let mut config = RunConfig::new(env, backend);
    if let Some(v) = args.branches.or(file.branches) {
        config.branches = v;
    }
    if let Some(v) = args.max_expansions.or(file.max_expansions) {
        config.max_expansions = v;
    }
    if let Some(v) = args.uct.clone().or(file.uct.clone()) {
        config.variant = v.parse::<UctVariant>().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    config.seed = args.seed.or(file.seed);
    if let Some(v) = args.objective_eval.map(|t| t == Toggle::On).or(file.objective_eval) {
        config.objective_evaluation = v;
    }
    if let Some(v) = file.max_tokens {
        config.max_tokens = v;
    }
    config.templates_dir = file.templates_dir.clone();
    if let Some(v) = args.jobs.or(file.jobs) {
        config.jobs = v;
    }
    config.parallel_siblings = args.parallel_siblings || file.parallel_siblings.unwrap_or(false);
    let t = &file.temperatures;
    for (slot, value) in [
        (&mut config.temperatures.thought_action, t.thought_action),
        (&mut config.temperatures.validation, t.validation),
        (&mut config.temperatures.assessment, t.assessment),
        (&mut config.temperatures.evaluation, t.evaluation),
    ] {
        if let Some(v) = value {
            *slot = v;
        }
    }
    config.sandbox = file.sandbox_config();
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    Ok(Invocation {
        config,
        tasks,
        task_id: args.task_id.clone(),
        out: args.out.clone().or(file.out.clone()),
        trace_dir: args.trace_dir.clone().or(file.trace_dir.clone()),
    })
}

fn trace_file_name(task_id: &str) -> String {
    let safe: String = task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    format!("{safe}.trace.json")
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Executes a resolved invocation and returns the process exit code.
pub fn execute(inv: &Invocation) -> Result<u8, CliError> {
    let mut tasks = load_tasks(inv.config.env, &inv.tasks)?;
    if let Some(id) = &inv.task_id {
        tasks.retain(|t| &t.id == id);
        if tasks.is_empty() {
            return Err(CliError::Usage(format!("no task with id `{id}` in {}", inv.tasks.display())));
        }
    }
    let records = run_batch(&tasks, &inv.config).map_err(|e| match e {
        RunError::Gateway(GatewayError::Replay(m)) | RunError::Gateway(GatewayError::Config(m)) => CliError::Config(m),
        other => CliError::Config(other.to_string()),
    })?;

    if let Some(dir) = &inv.trace_dir {
        for record in &records {
            if let Some(trace) = record.trace() {
                let path = dir.join(trace_file_name(&record.task_id));
                export_trace(trace, &path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            }
        }
    }
    let summary = summarize(&records);
    print!("{}", summary.render());
    if let Some(out) = &inv.out {
        let json = serde_json::to_string_pretty(&summary.rows).expect("summary serializes");
        write_file(out, &format!("{json}\n"))?;
    }

    let mut code = EXIT_OK;
    for record in &records {
        if let Err(abort) = &record.outcome {
            eprintln!("task {}: {}", record.task_id, abort.error);
            code = code.max(match abort.error {
                RunError::Gateway(_) => EXIT_GATEWAY,
                _ => EXIT_CONFIG,
            });
        }
    }
    Ok(code)
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let result = match &cli.command {
        Command::Run(args) => resolve(args).and_then(|inv| execute(&inv)),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            match &err {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Config(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(err.code())
        }
    }
}
