//! Agent configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{DEFAULT_TIMEOUT_MS, MIN_TIMEOUT_MS};
use crate::gateway::MODEL_KEY_ENV;
use crate::progcache::DEFAULT_THRESHOLD;
use crate::rag::{DEFAULT_STRIDE, DEFAULT_WINDOW};
use crate::reflector::{AttributionMode, DEFAULT_MAX_ITERATIONS};

const MAX_ITERATIONS_LIMIT: u32 = 20;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    Live,
    #[default]
    Replay,
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub base_url: String,
    pub model: String,
    pub key_env: String,
    pub replay_path: Option<PathBuf>,
    pub mode: ModelMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000".into(),
            model: "default".into(),
            key_env: MODEL_KEY_ENV.into(),
            replay_path: None,
            mode: ModelMode::Replay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    #[default]
    Sandbox,
    /// Results in file order, whatever the program.
    Fixture,
    /// Results looked up by program id.
    Recorded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxConfig {
    pub executor: ExecutorKind,
    /// Runner command; its arguments follow in `runner_args`.
    pub runner_path: PathBuf,
    pub runner_args: Vec<String>,
    pub timeout_ms: u64,
    pub network_allowed: bool,
    pub artifact_dir: PathBuf,
    /// Results file for the fixture and recorded executors.
    pub script_path: Option<PathBuf>,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            executor: ExecutorKind::Sandbox,
            runner_path: "procalc-runner".into(),
            runner_args: Vec::new(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            network_allowed: false,
            artifact_dir: "artifacts".into(),
            script_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReflectionConfig {
    pub max_iterations: u32,
    pub reflect_on_timeout: bool,
    pub attribution: AttributionMode,
}

impl Default for ReflectionConfig {
    fn default() -> Self {
        Self { max_iterations: DEFAULT_MAX_ITERATIONS, reflect_on_timeout: false, attribution: AttributionMode::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub path: PathBuf,
    pub threshold: f32,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self { path: "procalc-cache.jsonl".into(), threshold: DEFAULT_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RagConfig {
    pub window: usize,
    pub stride: usize,
    pub index_path: PathBuf,
    pub top_k: usize,
    pub embed_url: Option<String>,
    pub embed_model: String,
    pub embed_dim: usize,
    pub rerank_url: Option<String>,
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            index_path: "procalc-index".into(),
            top_k: 4,
            embed_url: None,
            embed_model: "default".into(),
            embed_dim: crate::rag::HashedBagOfWords::DEFAULT_DIM,
            rerank_url: None,
        }
    }
}

/// Switches that remove one capability each, for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub no_react: bool,
    pub no_external_knowledge: bool,
    pub no_reflection: bool,
    pub no_cache: bool,
}

impl AblationFlags {
    pub const NAMES: [&'static str; 4] = ["no_react", "no_external_knowledge", "no_reflection", "no_cache"];

    /// Flags with only `name` set.
    pub fn only(name: &str) -> Option<Self> {
        let mut f = Self::default();
        match name {
            "no_react" => f.no_react = true,
            "no_external_knowledge" => f.no_external_knowledge = true,
            "no_reflection" => f.no_reflection = true,
            "no_cache" => f.no_cache = true,
            _ => return None,
        }
        Some(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolsConfig {
    /// Directory of tool protocol files; the bundled set when absent.
    pub dir: Option<PathBuf>,
    /// Tools kept per sub-task.
    pub per_subtask: usize,
}

impl Default for ToolsConfig {
    fn default() -> Self {
        Self { dir: None, per_subtask: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub model: ModelConfig,
    pub sandbox: SandboxConfig,
    pub reflection: ReflectionConfig,
    pub cache: CacheConfig,
    pub rag: RagConfig,
    pub tools: ToolsConfig,
    pub ablation: AblationFlags,
}

impl AgentConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        cfg.resolve_relative_to(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    /// Reads and validates `path`. Relative paths inside the file are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let cfg = Self::parse(&text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !base.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.model.replay_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.sandbox.script_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.tools.dir.as_mut() {
            fix(p);
        }
        fix(&mut self.sandbox.artifact_dir);
        fix(&mut self.cache.path);
        fix(&mut self.rag.index_path);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if matches!(self.model.mode, ModelMode::Replay | ModelMode::Record) && self.model.replay_path.is_none() {
            return bad("model.mode replay/record needs model.replay_path".into());
        }
        if self.sandbox.timeout_ms < MIN_TIMEOUT_MS {
            return bad(format!("sandbox.timeout_ms must be at least {MIN_TIMEOUT_MS}"));
        }
        if self.sandbox.executor != ExecutorKind::Sandbox && self.sandbox.script_path.is_none() {
            return bad("fixture and recorded executors need sandbox.script_path".into());
        }
        if !(1..=MAX_ITERATIONS_LIMIT).contains(&self.reflection.max_iterations) {
            return bad(format!("reflection.max_iterations must be in 1..={MAX_ITERATIONS_LIMIT}"));
        }
        if !(0.0..=1.0).contains(&self.cache.threshold) {
            return bad("cache.threshold must be in [0, 1]".into());
        }
        if self.rag.window == 0 || self.rag.stride == 0 || self.rag.stride > self.rag.window {
            return bad("rag.stride must be in 1..=rag.window".into());
        }
        if self.rag.top_k == 0 || self.tools.per_subtask == 0 {
            return bad("rag.top_k and tools.per_subtask must be positive".into());
        }
        if self.rag.embed_dim == 0 {
            return bad("rag.embed_dim must be positive".into());
        }
        Ok(())
    }
}
