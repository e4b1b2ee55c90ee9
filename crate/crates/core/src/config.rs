//! TOML run configuration. Every key is optional; command-line flags win.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::SandboxConfig;
use crate::llm::{BackendConfig, HttpConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub env: Option<String>,
    pub tasks: Option<PathBuf>,
    /// `http` or `replay:PATH`.
    pub backend: Option<String>,
    pub branches: Option<u32>,
    pub max_expansions: Option<u32>,
    pub uct: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trace_dir: Option<PathBuf>,
    pub objective_eval: Option<bool>,
    pub max_tokens: Option<u32>,
    pub templates_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub parallel_siblings: Option<bool>,
    #[serde(default)]
    pub temperatures: TemperatureOverrides,
    #[serde(default)]
    pub http: HttpOverrides,
    #[serde(default)]
    pub sandbox: SandboxOverrides,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureOverrides {
    pub thought_action: Option<f64>,
    pub validation: Option<f64>,
    pub assessment: Option<f64>,
    pub evaluation: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpOverrides {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub request_timeout_secs: Option<f64>,
    pub max_retries: Option<u32>,
    pub retry_base_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxOverrides {
    pub interpreter: Option<Vec<String>>,
    pub timeout_secs: Option<f64>,
    pub workspace: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let raw = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let mut cfg: Self = toml::from_str(&raw).map_err(|e| format!("malformed {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.tasks, &mut cfg.out, &mut cfg.trace_dir, &mut cfg.templates_dir, &mut cfg.sandbox.workspace]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(spec) = &cfg.backend {
            if let Some(script) = spec.strip_prefix("replay:") {
                let script = Path::new(script);
                if script.is_relative() {
                    cfg.backend = Some(format!("replay:{}", base.join(script).display()));
                }
            }
        }
        Ok(cfg)
    }

    pub fn http_config(&self) -> HttpConfig {
        let mut http = HttpConfig::default();
        let o = &self.http;
        if let Some(v) = &o.endpoint {
            http.endpoint = v.clone();
        }
        if let Some(v) = &o.model {
            http.model = v.clone();
        }
        if let Some(v) = &o.api_key_env {
            http.api_key_env = Some(v.clone());
        }
        if let Some(v) = o.request_timeout_secs {
            http.request_timeout_secs = v;
        }
        if let Some(v) = o.max_retries {
            http.max_retries = v;
        }
        if let Some(v) = o.retry_base_ms {
            http.retry_base_ms = v;
        }
        http
    }

    pub fn sandbox_config(&self) -> SandboxConfig {
        let mut sandbox = SandboxConfig::default();
        if let Some(v) = &self.sandbox.interpreter {
            sandbox.interpreter = v.clone();
        }
        if let Some(v) = self.sandbox.timeout_secs {
            sandbox.timeout_secs = v;
        }
        if let Some(v) = &self.sandbox.workspace {
            sandbox.workspace = Some(v.clone());
        }
        sandbox
    }
}

/// Parses `http` or `replay:PATH`.
pub fn parse_backend(spec: &str, http: HttpConfig) -> Result<BackendConfig, String> {
    match spec {
        "http" => Ok(BackendConfig::Http(http)),
        other => match other.strip_prefix("replay:") {
            Some(path) if !path.is_empty() => Ok(BackendConfig::Replay { script_path: PathBuf::from(path) }),
            _ => Err(format!("unknown backend `{other}` (expected http or replay:PATH)")),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "env = \"wiki\"\nbackend = \"replay:s.json\"\ntasks = \"t.json\"\n[http]\nmodel = \"m\"\n[temperatures]\nthought_action = 0.2\n",
        )
        .unwrap();
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(cfg.tasks, Some(dir.path().join("t.json")));
        assert_eq!(cfg.backend, Some(format!("replay:{}", dir.path().join("s.json").display())));
        assert_eq!(cfg.http_config().model, "m");
        assert_eq!(cfg.temperatures.thought_action, Some(0.2));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "brances = 3\n").unwrap();
        assert!(FileConfig::load(&path).unwrap_err().contains("brances"));
    }

    #[test]
    fn backend_specs() {
        assert!(matches!(parse_backend("http", HttpConfig::default()), Ok(BackendConfig::Http(_))));
        assert!(matches!(parse_backend("replay:x.json", HttpConfig::default()), Ok(BackendConfig::Replay { .. })));
        assert!(parse_backend("replay:", HttpConfig::default()).is_err());
        assert!(parse_backend("grpc", HttpConfig::default()).is_err());
    }
}
