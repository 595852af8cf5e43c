//! Builds the collaborators of a run from an [`AgentConfig`].

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::config::{AgentConfig, ConfigError, ExecutorKind, ModelMode};
use crate::executor::{ExecError, Executor, FixtureExecutor, RecordedExecutor, SandboxExecutor, SandboxLimits};
use crate::gateway::{Gateway, GatewayError, HttpBackend, RecordingBackend, ReplayBackend, ReplayStore};
use crate::pipeline::{Agent, RunOptions};
use crate::progcache::{CacheError, ProgramCache};
use crate::rag::{EmbeddingBackend, HashedBagOfWords, HttpEmbedding, HttpReranker, RagError, Reranker, VectorIndex};
use crate::toolhub::{Registry, ToolhubError};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("tool registry: {0}")]
    Toolhub(#[from] ToolhubError),
    #[error("replay store: {0}")]
    Gateway(#[from] GatewayError),
    #[error("execution script {path}: {source}")]
    Script { path: String, source: ExecError },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("knowledge index: {0}")]
    Rag(#[from] RagError),
}

pub struct Components {
    pub registry: Registry,
    pub gateway: Gateway,
    /// The replay store behind the gateway in replay and record modes.
    pub replay: Option<Arc<ReplayStore>>,
    pub executor: Box<dyn Executor>,
    pub limits: SandboxLimits,
    pub cache: ProgramCache,
    pub index: VectorIndex,
    pub embedder: Box<dyn EmbeddingBackend>,
    pub reranker: Option<Box<dyn Reranker>>,
}

fn load_script(path: &Path, kind: ExecutorKind) -> Result<Box<dyn Executor>, RuntimeError> {
    let err = |source| RuntimeError::Script { path: path.display().to_string(), source };
    let text = std::fs::read_to_string(path).map_err(|e| err(ExecError::Io(e)))?;
    Ok(match kind {
        ExecutorKind::Fixture => Box::new(FixtureExecutor::from_jsonl(&text).map_err(err)?),
        _ => Box::new(RecordedExecutor::from_jsonl(&text).map_err(err)?),
    })
}

impl Components {
    pub fn from_config(cfg: &AgentConfig) -> Result<Self, RuntimeError> {
        cfg.validate()?;
        let registry = match &cfg.tools.dir {
            Some(dir) => Registry::load_dir(dir)?,
            None => Registry::bundled(),
        };
        let m = &cfg.model;
        let live = || HttpBackend::from_env(&m.base_url, m.model.clone(), &m.key_env);
        let store = match (&m.mode, &m.replay_path) {
            (ModelMode::Live, _) | (_, None) => None,
            (_, Some(p)) => Some(Arc::new(ReplayStore::open(p)?)),
        };
        let gateway = match (m.mode, &store) {
            (ModelMode::Replay, Some(s)) => Gateway::new(ReplayBackend::new(s.clone())),
            (ModelMode::Record, Some(s)) => Gateway::new(RecordingBackend::new(live(), s.clone())),
            _ => Gateway::new(live()),
        };
        let executor: Box<dyn Executor> = match (cfg.sandbox.executor, &cfg.sandbox.script_path) {
            (ExecutorKind::Sandbox, _) | (_, None) => {
                Box::new(SandboxExecutor::new(&cfg.sandbox.runner_path, cfg.sandbox.runner_args.clone()))
            }
            (kind, Some(p)) => load_script(p, kind)?,
        };
        let limits = SandboxLimits {
            wall_timeout_ms: cfg.sandbox.timeout_ms,
            artifact_dir: cfg.sandbox.artifact_dir.clone(),
            network_allowed: cfg.sandbox.network_allowed,
        };
        let embedder: Box<dyn EmbeddingBackend> = match &cfg.rag.embed_url {
            Some(url) => Box::new(HttpEmbedding::new(url.clone(), cfg.rag.embed_model.clone(), cfg.rag.embed_dim)),
            None => Box::new(HashedBagOfWords::new(cfg.rag.embed_dim)),
        };
        let reranker = cfg.rag.rerank_url.as_ref().map(|u| Box::new(HttpReranker::new(u.clone())) as Box<dyn Reranker>);
        Ok(Self {
            registry,
            gateway,
            replay: store,
            executor,
            limits,
            cache: ProgramCache::open(&cfg.cache.path)?,
            index: VectorIndex::load(&cfg.rag.index_path)?,
            embedder,
            reranker,
        })
    }

    pub fn agent(&self, options: RunOptions) -> Agent<'_> {
        Agent {
            registry: &self.registry,
            gateway: &self.gateway,
            executor: self.executor.as_ref(),
            limits: self.limits.clone(),
            cache: Some(&self.cache),
            index: Some(&self.index),
            embedder: self.embedder.as_ref(),
            reranker: self.reranker.as_deref(),
            options,
        }
    }
}
