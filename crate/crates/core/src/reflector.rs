//! Attributable reflection: blame a failure on one tool call, revise the
//! program with that tool's documentation and the attempt history, repeat.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composer::{synthesize, ComposeError, Program, ProgramBindings};
use crate::executor::{ExecError, ExecStatus, ExecutionResult, Executor, SandboxLimits};
use crate::extractor::ParamSet;
use crate::gateway::{Gateway, GatewayError, TemplateId};
use crate::planner::Query;
use crate::toolhub::Registry;

pub const AGENT_CODE: &str = "AGENT_CODE";
pub const DEFAULT_MAX_ITERATIONS: u32 = 3;
pub const ATTRIBUTION_MAX_TOKENS: u32 = 64;
/// Lines of context on each side of the faulty call.
const SNIPPET_PAD: usize = 2;
const PROGRAM_FILE: &str = "<program>";
const SELF_REPAIR_NOTE: &str = "The failure is in the program's own code rather than in a tool call. \
Re-read the traceback, check variable names, shapes, units and arithmetic, and fix the logic.";

#[derive(Debug, Error)]
pub enum ReflectError {
    #[error("attribution needs a runtime error, got {0}")]
    NotAnError(&'static str),
    #[error("iteration budget of {0} already spent")]
    BudgetSpent(u32),
    #[error("max_iterations must be at least 1")]
    InvalidBudget,
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "tool_id")]
pub enum Attribution {
    Tool(String),
    AgentCode,
}

impl Attribution {
    pub fn label(&self) -> &str {
        match self {
            Attribution::Tool(id) => id,
            Attribution::AgentCode => AGENT_CODE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMode {
    Model,
    #[default]
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub program: Program,
    pub result: ExecutionResult,
    pub attribution: Attribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionState {
    pub iteration: u32,
    /// One entry per failed attempt that was revised.
    pub history: Vec<Attempt>,
    pub max_iterations: u32,
    pub attributed: Option<Attribution>,
}

impl ReflectionState {
    pub fn new(max_iterations: u32) -> Result<Self, ReflectError> {
        if max_iterations == 0 {
            return Err(ReflectError::InvalidBudget);
        }
        Ok(Self { iteration: 0, history: Vec::new(), max_iterations, attributed: None })
    }

    /// One line per prior attempt: exception type, blamed tool, message.
    pub fn history_digest(&self) -> String {
        if self.history.is_empty() {
            return "None.".to_string();
        }
        self.history
            .iter()
            .enumerate()
            .map(|(j, a)| {
                let (ty, msg) = match &a.result.exception {
                    Some(e) => (e.type_name.as_str(), e.message.lines().next().unwrap_or("")),
                    None => (a.result.status.as_str(), ""),
                };
                let msg: String = msg.chars().take(120).collect();
                format!("iteration {j}: {ty} attributed to {}: {msg}", a.attribution.label())
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStatus {
    Succeeded,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionOutcome {
    pub status: LoopStatus,
    pub final_program: Program,
    pub final_result: ExecutionResult,
    pub state: ReflectionState,
    /// Number of executions performed, including the first.
    pub executions: u32,
}

/// Blame from frames alone: the deepest frame carrying a registered tool's
/// import marker. Library frames are judged by their file path only (their
/// source lines mention whatever the library itself imports); frames in the
/// program are judged by their source line.
pub fn attribute_deterministic(result: &ExecutionResult, registry: &Registry) -> Attribution {
    let Some(exc) = &result.exception else { return Attribution::AgentCode };
    for frame in &exc.frames {
        let evidence = if frame.file == PROGRAM_FILE { frame.code_context.as_deref() } else { Some(frame.file.as_str()) };
        let Some(evidence) = evidence else { continue };
        for tool in registry.iter() {
            if tool.marks(evidence) {
                return Attribution::Tool(tool.tool_id.clone());
            }
        }
    }
    Attribution::AgentCode
}

fn error_text(result: &ExecutionResult) -> String {
    let Some(exc) = &result.exception else {
        return format!("{} (no exception details)", result.status.as_str());
    };
    let mut s = format!("{}: {}\nTraceback, deepest frame first:", exc.type_name, exc.message);
    for f in &exc.frames {
        s.push_str(&format!("\n  {}:{} in {}", f.file, f.line, f.symbol));
        if let Some(c) = &f.code_context {
            s.push_str(&format!("\n    {}", c.trim()));
        }
    }
    s
}

/// Reads a tool id (or the agent-code sentinel) off the last non-empty line.
fn parse_attribution(text: &str, registry: &Registry) -> Option<Attribution> {
    let line = text.lines().rev().find(|l| !l.trim().is_empty())?;
    let last = line.rsplit(':').next().unwrap_or(line);
    let token = last.trim().trim_matches(|c: char| matches!(c, '`' | '"' | '\'' | '.' | '*')).trim();
    if token == AGENT_CODE {
        return Some(Attribution::AgentCode);
    }
    registry.get(token).map(|t| Attribution::Tool(t.tool_id.clone()))
}

/// Localizes a runtime error to a tool, by model or by markers.
///
/// Model answers that do not name a registered tool fall back to markers.
pub fn attribute(
    query: &Query,
    result: &ExecutionResult,
    registry: &Registry,
    gateway: &Gateway,
    mode: AttributionMode,
) -> Result<Attribution, ReflectError> {
    if result.status != ExecStatus::RuntimeError {
        return Err(ReflectError::NotAnError(result.status.as_str()));
    }
    if mode == AttributionMode::Model {
        let tools = registry.overviews().join("\n");
        let resp = gateway.complete_template(
            TemplateId::AttributionInstruction,
            &[("query", &query.text), ("tools", &tools), ("error", &error_text(result))],
            ATTRIBUTION_MAX_TOKENS,
        )?;
        if let Some(a) = parse_attribution(&resp.text, registry) {
            return Ok(a);
        }
        tracing::debug!(reply = %resp.text.trim(), "unparseable attribution, using markers");
    }
    Ok(attribute_deterministic(result, registry))
}

/// Deepest line of the failing program that the traceback points at.
fn failing_line(result: &ExecutionResult) -> Option<usize> {
    result
        .exception
        .as_ref()?
        .frames
        .iter()
        .find(|f| f.file == PROGRAM_FILE)
        .map(|f| f.line as usize)
}

/// Lines around the blamed call, or around the failing line.
pub fn faulty_snippet(program: &Program, result: &ExecutionResult, attribution: &Attribution) -> String {
    let line = failing_line(result);
    let span = match attribution {
        Attribution::Tool(id) => {
            let calls: Vec<_> = program.tool_calls.iter().filter(|c| &c.tool_id == id).collect();
            calls
                .iter()
                .find(|c| line.is_some_and(|l| c.line_span.0 <= l && l <= c.line_span.1))
                .or_else(|| calls.last())
                .map(|c| c.line_span)
                .or(line.map(|l| (l, l)))
        }
        Attribution::AgentCode => line.map(|l| (l, l)),
    };
    match span {
        Some(s) => program.snippet(s, SNIPPET_PAD),
        None => "(location unavailable)".to_string(),
    }
}

/// Everything the revision prompt is built from besides the failure itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RevisionContext {
    pub query: Query,
    /// Bindings used for the first draft.
    pub bindings: ProgramBindings,
    pub requested: Vec<String>,
    pub params: Vec<ParamSet>,
}

/// Next program after a failure at `state.iteration`.
pub fn revise(
    ctx: &RevisionContext,
    program: &Program,
    result: &ExecutionResult,
    attribution: &Attribution,
    state: &ReflectionState,
    registry: &Registry,
    gateway: &Gateway,
) -> Result<Program, ReflectError> {
    if state.iteration >= state.max_iterations {
        return Err(ReflectError::BudgetSpent(state.max_iterations));
    }
    let tool_doc = match attribution {
        Attribution::Tool(id) => match registry.get(id) {
            Some(t) => format!("Documentation for {} ({}):\n{}", t.name, t.tool_id, t.docs.trim()),
            None => SELF_REPAIR_NOTE.to_string(),
        },
        Attribution::AgentCode => SELF_REPAIR_NOTE.to_string(),
    };
    let mut b = ctx.bindings.clone();
    b.docs = format!("{tool_doc}\n\n{}", ctx.bindings.docs);
    b.error = format!(
        "{}\nFailing program section (blamed on {}):\n{}",
        error_text(result),
        attribution.label(),
        faulty_snippet(program, result, attribution)
    );
    b.history = state.history_digest();
    let generated = synthesize(&b, registry, &ctx.requested, &ctx.params, state.iteration + 1, gateway)?;
    Ok(generated.program)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopOptions {
    pub max_iterations: u32,
    pub reflect_on_timeout: bool,
    pub mode: AttributionMode,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self { max_iterations: DEFAULT_MAX_ITERATIONS, reflect_on_timeout: false, mode: AttributionMode::default() }
    }
}

/// Executes `initial`, then revises and re-executes on runtime errors until
/// success or `max_iterations` revisions. At most `max_iterations + 1`
/// executions happen.
#[allow(clippy::too_many_arguments)]
pub fn run_loop(
    ctx: &RevisionContext,
    initial: Program,
    executor: &dyn Executor,
    limits: &SandboxLimits,
    registry: &Registry,
    gateway: &Gateway,
    options: LoopOptions,
) -> Result<ReflectionOutcome, ReflectError> {
    let mut state = ReflectionState::new(options.max_iterations)?;
    let mut program = initial;
    let mut executions = 0;
    loop {
        let result = executor.execute(&program, limits)?;
        executions += 1;
        tracing::info!(iteration = state.iteration, status = result.status.as_str(), "executed");
        let reflectable = match result.status {
            ExecStatus::Success => {
                return Ok(ReflectionOutcome {
                    status: LoopStatus::Succeeded,
                    final_program: program,
                    final_result: result,
                    state,
                    executions,
                })
            }
            ExecStatus::RuntimeError => true,
            ExecStatus::Timeout => options.reflect_on_timeout,
            ExecStatus::SetupError => false,
        };
        if !reflectable || state.iteration >= state.max_iterations {
            return Ok(ReflectionOutcome {
                status: LoopStatus::Exhausted,
                final_program: program,
                final_result: result,
                state,
                executions,
            });
        }
        let attribution = if result.status == ExecStatus::RuntimeError {
            attribute(&ctx.query, &result, registry, gateway, options.mode)?
        } else {
            Attribution::AgentCode
        };
        let revised = revise(ctx, &program, &result, &attribution, &state, registry, gateway)?;
        state.attributed = Some(attribution.clone());
        state.history.push(Attempt { program, result, attribution });
        state.iteration += 1;
        program = revised;
    }
}

/// A single execution with no revision, for runs with reflection disabled.
pub fn run_once(
    program: Program,
    executor: &dyn Executor,
    limits: &SandboxLimits,
) -> Result<ReflectionOutcome, ReflectError> {
    let result = executor.execute(&program, limits)?;
    let status = if result.is_success() { LoopStatus::Succeeded } else { LoopStatus::Exhausted };
    Ok(ReflectionOutcome {
        status,
        final_program: program,
        final_result: result,
        state: ReflectionState::new(1)?,
        executions: 1,
    })
}
