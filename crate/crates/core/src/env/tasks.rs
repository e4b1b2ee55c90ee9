use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Catalog, EnvError, EnvKind, Fixtures, GroundTruth, ShopTarget, TaskInstance, WikiCorpus};

/// On-disk task list. Fixture paths are relative to the tasks file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TasksFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    #[serde(alias = "prompt", alias = "question")]
    pub instruction: String,
    /// Visible asserts for code tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asserts: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<serde_json::Value>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, EnvError> {
    let raw = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => EnvError::MissingFixture(path.display().to_string()),
        _ => EnvError::Config(format!("cannot read {}: {e}", path.display())),
    })?;
    serde_json::from_str(&raw).map_err(|e| EnvError::Config(format!("malformed {}: {e}", path.display())))
}

fn ground_truth(kind: EnvKind, spec: &TaskSpec) -> Result<Option<GroundTruth>, EnvError> {
    let Some(value) = &spec.ground_truth else {
        return Ok(None);
    };
    let bad = |e: serde_json::Error| EnvError::Config(format!("task {}: bad ground truth: {e}", spec.id));
    Ok(Some(match kind {
        EnvKind::WikiQa => GroundTruth::Answer(serde_json::from_value(value.clone()).map_err(bad)?),
        EnvKind::MockShop => GroundTruth::Purchase(serde_json::from_value::<ShopTarget>(value.clone()).map_err(bad)?),
        EnvKind::CodeTasks => GroundTruth::Tests(serde_json::from_value(value.clone()).map_err(bad)?),
    }))
}

/// Loads a tasks file and the fixture it points to.
pub fn load_tasks(kind: EnvKind, path: &Path) -> Result<Vec<TaskInstance>, EnvError> {
    let file: TasksFile = read_json(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let need = |p: &Option<PathBuf>, what: &str| {
        p.as_ref()
            .map(|p| base.join(p))
            .ok_or_else(|| EnvError::Config(format!("{} needs a `{what}` entry", path.display())))
    };
    let shared = match kind {
        EnvKind::WikiQa => {
            let corpus: WikiCorpus = read_json(&need(&file.corpus, "corpus")?)?;
            corpus.validate()?;
            Some(Fixtures::Wiki(Arc::new(corpus)))
        }
        EnvKind::MockShop => {
            let catalog: Catalog = read_json(&need(&file.catalog, "catalog")?)?;
            catalog.validate()?;
            Some(Fixtures::Shop(Arc::new(catalog)))
        }
        EnvKind::CodeTasks => None,
    };
    let mut seen = std::collections::BTreeSet::new();
    file.tasks
        .iter()
        .map(|spec| {
            if !seen.insert(spec.id.clone()) {
                return Err(EnvError::Config(format!("duplicate task id {}", spec.id)));
            }
            let fixtures = match &shared {
                Some(f) => f.clone(),
                None => Fixtures::Code(
                    spec.asserts
                        .clone()
                        .filter(|a| !a.is_empty())
                        .ok_or_else(|| EnvError::Config(format!("code task {} has no asserts", spec.id)))?,
                ),
            };
            Ok(TaskInstance {
                id: spec.id.clone(),
                instruction: spec.instruction.clone(),
                ground_truth: ground_truth(kind, spec)?,
                fixtures,
            })
        })
        .collect()
}
