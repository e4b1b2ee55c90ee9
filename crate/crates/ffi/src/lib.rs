//! C ABI over the treeplan scoring functions, reasoning tree and task runner.
//!
//! Every function returns a [`TpStatus`]. On failure a message is available
//! from [`tp_last_error`] on the same thread until the next call. Strings
//! returned through out-parameters are owned by the caller and must be
//! released with [`tp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use treeplan::config::parse_backend;
use treeplan::env::{load_tasks, EnvKind};
use treeplan::llm::HttpConfig;
use treeplan::orchestrator::{run_master, RunError};
use treeplan::tree::{Eligibility, TreeError};
use treeplan::uct::{self, DomainError};
use treeplan::{AgentContext, ReasoningTree, RewardStats, UctVariant};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Domain = 3,
    Tree = 4,
    Config = 5,
    Environment = 6,
    Gateway = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpVariant {
    Full = 0,
    Fixed = 1,
    NoExploration = 2,
    InitialOnly = 3,
    OriginalMcts = 4,
    /// Uses the `lambda` argument.
    Lambda = 5,
}

/// Terminal verdict passed to [`tp_tree_add_child`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpVerdict {
    NotTerminal = 0,
    Failed = 1,
    Passed = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpStats {
    pub r0: f64,
    pub c0: f64,
    pub reward_sum: f64,
    pub n: u64,
}

/// Opaque reasoning tree.
pub struct TpTree {
    inner: ReasoningTree,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(TpStatus, String);

impl From<DomainError> for Failure {
    fn from(e: DomainError) -> Self {
        Failure(TpStatus::Domain, e.to_string())
    }
}

impl From<TreeError> for Failure {
    fn from(e: TreeError) -> Self {
        match e {
            TreeError::Domain(d) => d.into(),
            other => Failure(TpStatus::Tree, other.to_string()),
        }
    }
}

impl From<&RunError> for Failure {
    fn from(e: &RunError) -> Self {
        let status = match e {
            RunError::Config(_) => TpStatus::Config,
            RunError::Env(_) => TpStatus::Environment,
            RunError::Gateway(_) => TpStatus::Gateway,
            RunError::Tree(_) => TpStatus::Tree,
        };
        Failure(status, e.to_string())
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> TpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => TpStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TpStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(TpStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn out<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| null(what))
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(TpStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn tree_ref<'a>(tree: *const TpTree) -> Result<&'a ReasoningTree, Failure> {
    tree.as_ref().map(|t| &t.inner).ok_or_else(|| null("tree"))
}

unsafe fn tree_mut<'a>(tree: *mut TpTree) -> Result<&'a mut ReasoningTree, Failure> {
    tree.as_mut().map(|t| &mut t.inner).ok_or_else(|| null("tree"))
}

fn variant(v: TpVariant, lambda: f64) -> Result<UctVariant, Failure> {
    Ok(match v {
        TpVariant::Full => UctVariant::Full,
        TpVariant::Fixed => UctVariant::FixedExplorationWeight,
        TpVariant::NoExploration => UctVariant::NoExploration,
        TpVariant::InitialOnly => UctVariant::InitialOnly,
        TpVariant::OriginalMcts => UctVariant::OriginalMcts,
        TpVariant::Lambda => UctVariant::lambda_weighted(lambda)?,
    })
}

fn to_stats(s: &TpStats) -> Result<RewardStats, Failure> {
    Ok(RewardStats::with_history(s.r0, s.c0, s.reward_sum, s.n)?)
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Message for the most recent failure on this thread, or null. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn tp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn tp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// UCT score of a node whose parent has `parent_n` backpropagations.
///
/// # Safety
/// `stats` must be readable and `out_score` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_uct(
    stats: *const TpStats,
    parent_n: u64,
    kind: TpVariant,
    lambda: f64,
    out_score: *mut f64,
) -> TpStatus {
    guard(|| {
        let stats = to_stats(stats.as_ref().ok_or_else(|| null("stats"))?)?;
        let score = uct::uct(&stats, parent_n, variant(kind, lambda)?)?;
        *out(out_score, "out_score")? = score;
        Ok(())
    })
}

/// # Safety
/// `out_weight` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_exploration_weight(c0: f64, out_weight: *mut f64) -> TpStatus {
    guard(|| {
        *out(out_weight, "out_weight")? = uct::exploration_weight(c0)?;
        Ok(())
    })
}

/// # Safety
/// `out_epsilon` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_hoeffding_epsilon(big_n: f64, n: u64, out_epsilon: *mut f64) -> TpStatus {
    guard(|| {
        *out(out_epsilon, "out_epsilon")? = uct::hoeffding_epsilon(big_n, n)?;
        Ok(())
    })
}

/// Maps a 0..10 score and confidence onto initial reward and confidence.
///
/// # Safety
/// `out_stats` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_normalize_assessment(score: u8, confidence: u8, out_stats: *mut TpStats) -> TpStatus {
    guard(|| {
        let (r0, c0) = uct::normalize_assessment(score, confidence);
        *out(out_stats, "out_stats")? = TpStats { r0, c0, reward_sum: 0.0, n: 0 };
        Ok(())
    })
}

/// New empty tree. Release with [`tp_tree_free`].
#[no_mangle]
pub extern "C" fn tp_tree_new() -> *mut TpTree {
    Box::into_raw(Box::new(TpTree { inner: ReasoningTree::new() }))
}

/// # Safety
/// `tree` must be null or a handle from [`tp_tree_new`], freed at most once.
#[no_mangle]
pub unsafe extern "C" fn tp_tree_free(tree: *mut TpTree) {
    if !tree.is_null() {
        drop(Box::from_raw(tree));
    }
}

/// # Safety
/// `tree` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tp_tree_len(tree: *const TpTree) -> usize {
    tree.as_ref().map_or(0, |t| t.inner.len())
}

/// # Safety
/// `tree` must be a live handle and `out_id` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_tree_add_root(tree: *mut TpTree, r0: f64, c0: f64, out_id: *mut u64) -> TpStatus {
    guard(|| {
        let tree = tree_mut(tree)?;
        let id = tree.add_root(AgentContext::default(), RewardStats::new(r0, c0)?)?;
        *out(out_id, "out_id")? = id;
        Ok(())
    })
}

/// # Safety
/// `tree` must be a live handle and `out_id` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_tree_add_child(
    tree: *mut TpTree,
    parent: u64,
    r0: f64,
    c0: f64,
    verdict: TpVerdict,
    out_id: *mut u64,
) -> TpStatus {
    guard(|| {
        let tree = tree_mut(tree)?;
        let passed = match verdict {
            TpVerdict::NotTerminal => None,
            TpVerdict::Failed => Some(false),
            TpVerdict::Passed => Some(true),
        };
        let stats = RewardStats::new(r0, c0)?;
        let id = tree.add_child(parent, AgentContext::default(), stats, passed.is_some(), passed)?;
        *out(out_id, "out_id")? = id;
        Ok(())
    })
}

/// Pushes a failed terminal's initial reward into all of its ancestors.
///
/// # Safety
/// `tree` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tp_tree_backpropagate(tree: *mut TpTree, failed_terminal: u64) -> TpStatus {
    guard(|| Ok(tree_mut(tree)?.backpropagate(failed_terminal)?))
}

/// Highest-scoring node to expand next. With `include_failed_terminals`
/// set, failed terminals stay eligible.
///
/// # Safety
/// `tree` must be a live handle and `out_id` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_tree_select(
    tree: *const TpTree,
    kind: TpVariant,
    lambda: f64,
    include_failed_terminals: bool,
    out_id: *mut u64,
) -> TpStatus {
    guard(|| {
        let eligibility = if include_failed_terminals {
            Eligibility::IncludeFailedTerminals
        } else {
            Eligibility::NonTerminal
        };
        let id = tree_ref(tree)?.select_with_eligibility(variant(kind, lambda)?, eligibility)?;
        *out(out_id, "out_id")? = id;
        Ok(())
    })
}

/// # Safety
/// `tree` must be a live handle and `out_stats` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_tree_stats(tree: *const TpTree, id: u64, out_stats: *mut TpStats) -> TpStatus {
    guard(|| {
        let s = tree_ref(tree)?.node(id)?.stats;
        *out(out_stats, "out_stats")? = TpStats { r0: s.r0, c0: s.c0, reward_sum: s.reward_sum, n: s.n };
        Ok(())
    })
}

/// Terminal node with the highest reward estimate. Sets `found` to false
/// when the tree holds no terminal.
///
/// # Safety
/// `tree` must be a live handle; `found` and `out_id` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_tree_best_terminal(tree: *const TpTree, found: *mut bool, out_id: *mut u64) -> TpStatus {
    guard(|| {
        let best = tree_ref(tree)?.best_terminal();
        *out(found, "found")? = best.is_some();
        *out(out_id, "out_id")? = best.unwrap_or(0);
        Ok(())
    })
}

/// Runs one task and returns its trace as canonical JSON.
///
/// `env` is `wiki`, `shop` or `code`; `backend` is `http` or
/// `replay:PATH`; a null `task_id` runs the first task in the file. A
/// failure after the search has started still yields the partial trace in
/// `out_trace_json`; failures before that, including an unreachable
/// backend, report [`TpStatus::Config`].
///
/// # Safety
/// String arguments must be null-terminated; `out_trace_json` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_run_task(
    env: *const c_char,
    tasks_path: *const c_char,
    task_id: *const c_char,
    backend: *const c_char,
    out_trace_json: *mut *mut c_char,
) -> TpStatus {
    guard(|| {
        let slot = out(out_trace_json, "out_trace_json")?;
        *slot = ptr::null_mut();
        let kind: EnvKind = text(env, "env")?.parse().map_err(|e| Failure(TpStatus::Config, e))?;
        let path = PathBuf::from(text(tasks_path, "tasks_path")?);
        let wanted = if task_id.is_null() { None } else { Some(text(task_id, "task_id")?) };
        let backend = parse_backend(text(backend, "backend")?, HttpConfig::default())
            .map_err(|e| Failure(TpStatus::Config, e))?;
        let tasks = load_tasks(kind, &path).map_err(|e| Failure(TpStatus::Config, e.to_string()))?;
        let task = match wanted {
            Some(id) => tasks.iter().find(|t| t.id == id),
            None => tasks.first(),
        }
        .ok_or_else(|| Failure(TpStatus::Config, format!("no matching task in {}", path.display())))?;
        match run_master(task, &treeplan::RunConfig::new(kind, backend)) {
            Ok(result) => {
                *slot = into_c_string(result.trace.to_canonical_json());
                Ok(())
            }
            Err(abort) => match &abort.trace {
                Some(trace) => {
                    *slot = into_c_string(trace.to_canonical_json());
                    Err(Failure::from(&abort.error))
                }
                None => Err(Failure(TpStatus::Config, abort.error.to_string())),
            },
        }
    })
}
