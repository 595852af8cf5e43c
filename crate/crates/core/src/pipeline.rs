//! End-to-end run for one query: cache lookup, planning, tool selection,
//! parameter extraction, ReAct, retrieval, generation, execution with
//! reflection, integration, cache store.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composer::{generate_program, integrate, tools_block, ComposeError, FinalResponse, Origin, ProgramBindings};
use crate::config::{AblationFlags, AgentConfig};
use crate::executor::{ExecStatus, Executor, SandboxLimits};
use crate::extractor::{check_stipulations, extract, ParamSet, StipulationReport};
use crate::gateway::{Gateway, GatewayError};
use crate::planner::{plan, topo_order, PlanError, Query, TaskGraph};
use crate::progcache::{CacheError, HitKind, ProgramCache};
use crate::rag::{EmbeddingBackend, RagError, Reranker, RetrievalHit, VectorIndex};
use crate::react_agent::{run_react, Knowledge, ReactTrace};
use crate::reflector::{run_loop, run_once, LoopOptions, LoopStatus, ReflectError, ReflectionOutcome, RevisionContext};
use crate::toolhub::{Registry, ToolRef, ToolhubError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("planning failed: {0}")]
    Plan(#[from] PlanError),
    #[error("tool selection failed: {0}")]
    Toolhub(#[from] ToolhubError),
    #[error("model call failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error("program generation failed: {0}")]
    Compose(#[from] ComposeError),
    #[error("execution failed: {0}")]
    Reflect(#[from] ReflectError),
    #[error("program cache: {0}")]
    Cache(#[from] CacheError),
    #[error("knowledge retrieval failed: {0}")]
    Rag(#[from] RagError),
    #[error("cannot write trace {path}: {source}")]
    Trace { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    /// The model-call error underneath, if the failure came from a model call.
    pub fn gateway_error(&self) -> Option<&GatewayError> {
        match self {
            PipelineError::Gateway(g)
            | PipelineError::Plan(PlanError::Gateway(g))
            | PipelineError::Compose(ComposeError::Gateway(g))
            | PipelineError::Reflect(ReflectError::Gateway(g))
            | PipelineError::Reflect(ReflectError::Compose(ComposeError::Gateway(g))) => Some(g),
            _ => None,
        }
    }

    /// Key of the request a replay store or backend could not answer.
    pub fn request_key(&self) -> Option<&str> {
        self.gateway_error().and_then(GatewayError::request_key)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub ablation: AblationFlags,
    pub loop_options: LoopOptions,
    pub cache_threshold: f32,
    pub per_subtask: usize,
    pub top_k: usize,
    pub trace_dir: Option<PathBuf>,
}

impl RunOptions {
    pub fn from_config(cfg: &AgentConfig) -> Self {
        Self {
            ablation: cfg.ablation,
            loop_options: LoopOptions {
                max_iterations: cfg.reflection.max_iterations,
                reflect_on_timeout: cfg.reflection.reflect_on_timeout,
                mode: cfg.reflection.attribution,
            },
            cache_threshold: cfg.cache.threshold,
            per_subtask: cfg.tools.per_subtask,
            top_k: cfg.rag.top_k,
            trace_dir: None,
        }
    }
}

impl Default for RunOptions {
    fn default() -> Self {
        Self::from_config(&AgentConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskSelection {
    pub subtask_id: String,
    pub description: String,
    pub tools: Vec<ToolRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolStipulations {
    pub tool_id: String,
    pub report: StipulationReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Succeeded,
    Exhausted,
}

/// Everything a run produced, stage by stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub query: Query,
    pub status: RunStatus,
    pub cache_hit: Option<HitKind>,
    pub graph: Option<TaskGraph>,
    pub selection: Vec<SubtaskSelection>,
    pub selected_tools: Vec<String>,
    pub params: Vec<ParamSet>,
    pub stipulations: Vec<ToolStipulations>,
    pub react: Option<ReactTrace>,
    pub knowledge: Vec<RetrievalHit>,
    pub unrequested_tools: Vec<String>,
    pub outcome: ReflectionOutcome,
    pub response: Option<FinalResponse>,
    pub model_calls: usize,
}

impl RunReport {
    /// True when the final execution never got past runner setup.
    pub fn setup_failed(&self) -> bool {
        self.outcome.final_result.status == ExecStatus::SetupError
    }
}

/// Writes one file per stage into the run directory.
struct Tracer<'a> {
    dir: Option<&'a Path>,
}

impl Tracer<'_> {
    fn write(&self, name: &str, contents: &str) -> Result<(), PipelineError> {
        let Some(dir) = self.dir else { return Ok(()) };
        let path = dir.join(name);
        fs::create_dir_all(dir)
            .and_then(|_| fs::write(&path, contents))
            .map_err(|source| PipelineError::Trace { path, source })
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), PipelineError> {
        if self.dir.is_none() {
            return Ok(());
        }
        let mut s = serde_json::to_string_pretty(value).expect("trace values serialize");
        s.push('\n');
        self.write(name, &s)
    }
}

/// The collaborators a run needs. Borrowed so callers can inspect them
/// (call counts, cache contents) afterwards.
pub struct Agent<'a> {
    pub registry: &'a Registry,
    pub gateway: &'a Gateway,
    pub executor: &'a dyn Executor,
    pub limits: SandboxLimits,
    pub cache: Option<&'a ProgramCache>,
    pub index: Option<&'a VectorIndex>,
    pub embedder: &'a dyn EmbeddingBackend,
    pub reranker: Option<&'a dyn Reranker>,
    pub options: RunOptions,
}

impl Agent<'_> {
    /// Tools per sub-task in dependency order; the union keeps first
    /// appearance order. Sub-tasks that need no tools, and zero-score
    /// matches, contribute nothing.
    fn select_tools(&self, graph: &TaskGraph) -> Result<(Vec<SubtaskSelection>, Vec<String>), PipelineError> {
        let mut selection = Vec::new();
        let mut union: Vec<String> = Vec::new();
        for task in topo_order(graph)? {
            if !task.needs_tools {
                continue;
            }
            let tools: Vec<ToolRef> = self
                .registry
                .select(&task.description, self.options.per_subtask)?
                .into_iter()
                .filter(|r| r.score > 0.0)
                .collect();
            for r in &tools {
                if !union.contains(&r.tool_id) {
                    union.push(r.tool_id.clone());
                }
            }
            selection.push(SubtaskSelection { subtask_id: task.id, description: task.description, tools });
        }
        Ok((selection, union))
    }

    fn knowledge(&self) -> Option<Knowledge<'_>> {
        if self.options.ablation.no_external_knowledge {
            return None;
        }
        self.index.map(|index| Knowledge { index, backend: self.embedder })
    }

    fn execute(&self, ctx: &RevisionContext, program: crate::composer::Program) -> Result<ReflectionOutcome, PipelineError> {
        Ok(if self.options.ablation.no_reflection {
            run_once(program, self.executor, &self.limits)?
        } else {
            run_loop(ctx, program, self.executor, &self.limits, self.registry, self.gateway, self.options.loop_options)?
        })
    }

    pub fn run(&self, query: &Query) -> Result<RunReport, PipelineError> {
        let tracer = Tracer { dir: self.options.trace_dir.as_deref() };
        let calls_before = self.gateway.call_count();
        tracer.json("00_query.json", query)?;

        let cache = self.cache.filter(|_| !self.options.ablation.no_cache);
        let hit = match cache {
            Some(c) => c.get(query, Some(self.embedder), self.options.cache_threshold)?,
            None => None,
        };

        let mut report;
        let ctx;
        let first;
        if let Some(hit) = hit {
            tracing::info!(kind = ?hit.kind, similarity = hit.similarity, "serving cached program");
            tracer.json("01_cache_hit.json", &hit.entry)?;
            let program = hit.entry.program;
            let tools = program.tool_ids();
            ctx = RevisionContext {
                query: query.clone(),
                bindings: ProgramBindings::new(query, tools_block(self.registry, &tools, &[])?, &[], None),
                requested: tools.clone(),
                params: Vec::new(),
            };
            report = RunReport::empty(query, Some(hit.kind), tools, &program);
            first = program;
        } else {
            let graph = plan(query, &self.registry.overviews(), self.gateway)?;
            tracer.json("01_plan.json", &graph)?;

            let (selection, tools) = self.select_tools(&graph)?;
            tracer.json("02_selection.json", &selection)?;

            let mut params = Vec::new();
            let mut stipulations = Vec::new();
            for id in &tools {
                let protocol = self.registry.require(id)?;
                let p = if protocol.args.is_empty() { ParamSet::empty(id) } else { extract(query, protocol, self.gateway)? };
                stipulations.push(ToolStipulations { tool_id: id.clone(), report: check_stipulations(&p, protocol) });
                params.push(p);
            }
            tracer.json("03_params.json", &(&params, &stipulations))?;

            let knowledge = self.knowledge();
            let react = if self.options.ablation.no_react {
                None
            } else {
                Some(run_react(query, &tools, self.registry, knowledge.as_ref(), self.gateway)?)
            };
            tracer.json("04_react.json", &react)?;

            let hits = match &knowledge {
                Some(k) if !k.index.is_empty() => {
                    k.index.retrieve(&query.text, self.options.top_k, self.embedder, self.reranker)?
                }
                _ => Vec::new(),
            };
            tracer.json("05_knowledge.json", &hits)?;

            let chunks: Vec<_> = hits.iter().map(|h| h.chunk.clone()).collect();
            let observations = react.as_ref().map(ReactTrace::render);
            let generated = generate_program(
                query,
                &graph,
                &tools,
                &params,
                &chunks,
                observations.as_deref(),
                self.registry,
                self.gateway,
            )?;
            tracer.write("06_program.py", &generated.program.source)?;

            ctx = RevisionContext {
                query: query.clone(),
                bindings: ProgramBindings::new(
                    query,
                    tools_block(self.registry, &tools, &params)?,
                    &chunks,
                    observations.as_deref(),
                ),
                requested: tools.clone(),
                params: params.clone(),
            };
            report = RunReport::empty(query, None, tools, &generated.program);
            report.graph = Some(graph);
            report.selection = selection;
            report.params = params;
            report.stipulations = stipulations;
            report.react = react;
            report.knowledge = hits;
            report.unrequested_tools = generated.unrequested;
            first = generated.program;
        }

        let outcome = self.execute(&ctx, first)?;
        for (j, attempt) in outcome.state.history.iter().enumerate() {
            tracer.json(&format!("07_attempt_{j}.json"), attempt)?;
        }
        tracer.json("08_outcome.json", &outcome)?;

        if outcome.status == LoopStatus::Succeeded {
            let response = integrate(query, &outcome.final_program, &outcome.final_result, self.gateway)?;
            tracer.json("09_response.json", &response)?;
            if let Some(c) = cache {
                if outcome.final_program.origin != Origin::Cache {
                    c.put(query, &outcome.final_program, Some(self.embedder))?;
                }
            }
            report.status = RunStatus::Succeeded;
            report.response = Some(response);
        } else {
            report.status = RunStatus::Exhausted;
        }
        report.outcome = outcome;
        report.model_calls = self.gateway.call_count() - calls_before;
        tracer.json("10_summary.json", &Summary::of(&report))?;
        Ok(report)
    }
}

/// Compact run summary written last into the trace.
#[derive(Serialize)]
struct Summary<'a> {
    status: RunStatus,
    cache_hit: Option<HitKind>,
    selected_tools: &'a [String],
    executions: u32,
    revisions: u32,
    model_calls: usize,
}

impl<'a> Summary<'a> {
    fn of(r: &'a RunReport) -> Self {
        Self {
            status: r.status,
            cache_hit: r.cache_hit,
            selected_tools: &r.selected_tools,
            executions: r.outcome.executions,
            revisions: r.outcome.state.iteration,
            model_calls: r.model_calls,
        }
    }
}

impl RunReport {
    fn empty(query: &Query, cache_hit: Option<HitKind>, tools: Vec<String>, program: &crate::composer::Program) -> Self {
        Self {
            query: query.clone(),
            status: RunStatus::Exhausted,
            cache_hit,
            graph: None,
            selection: Vec::new(),
            selected_tools: tools,
            params: Vec::new(),
            stipulations: Vec::new(),
            react: None,
            knowledge: Vec::new(),
            unrequested_tools: Vec::new(),
            outcome: ReflectionOutcome {
                status: LoopStatus::Exhausted,
                final_program: program.clone(),
                final_result: crate::executor::ExecutionResult::success(""),
                state: crate::reflector::ReflectionState::new(1).expect("positive budget"),
                executions: 0,
            },
            response: None,
            model_calls: 0,
        }
    }
}
