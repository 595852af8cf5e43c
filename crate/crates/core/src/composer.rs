//! Program synthesis from the query, tool protocols and retrieved knowledge,
//! and integration of execution output into the final answer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{ExecStatus, ExecutionResult};
use crate::extractor::ParamSet;
use crate::gateway::{Gateway, GatewayError, TemplateId};
use crate::planner::{needs_tools, Query, TaskGraph};
use crate::rag::Chunk;
use crate::text::sha256_hex;
use crate::toolhub::{Registry, ToolhubError};

pub const PROGRAM_MAX_TOKENS: u32 = 2048;
pub const INTEGRATION_MAX_TOKENS: u32 = 512;
/// Retrieved chunks beyond this many are not put in the prompt.
pub const MAX_KNOWLEDGE_CHUNKS: usize = 6;
pub const LANGUAGE_TAG: &str = "python";
const NONE: &str = "None.";

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("model output contained no fenced code block")]
    NoCodeBlock,
    #[error("fenced block is tagged `{0}`, expected python")]
    UnknownLanguage(String),
    #[error("the plan needs tools but none were selected")]
    NoTools,
    #[error("cannot integrate a result with status {0}")]
    NotSuccessful(&'static str),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Toolhub(#[from] ToolhubError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Generated,
    Revised,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool_id: String,
    /// 1-based, inclusive.
    pub line_span: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_params: Option<ParamSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub program_id: String,
    pub language_tag: String,
    pub source: String,
    pub tool_calls: Vec<ToolCall>,
    pub revision_index: u32,
    pub origin: Origin,
}

impl Program {
    /// The id is derived from the source, so equal programs share it.
    pub fn new(source: impl Into<String>, tool_calls: Vec<ToolCall>, revision_index: u32, origin: Origin) -> Self {
        let source = source.into();
        debug_assert!(!source.is_empty());
        debug_assert_eq!(revision_index == 0, origin != Origin::Revised);
        Self {
            program_id: format!("prog-{}", &sha256_hex(source.as_bytes())[..12]),
            language_tag: LANGUAGE_TAG.to_string(),
            source,
            tool_calls,
            revision_index,
            origin,
        }
    }

    /// The same program, marked as served from the cache.
    pub fn served_from_cache(mut self) -> Self {
        self.origin = Origin::Cache;
        self.revision_index = 0;
        self
    }

    pub fn line_count(&self) -> usize {
        self.source.lines().count()
    }

    /// Source lines `start-pad ..= end+pad`, clamped, each prefixed with its
    /// line number.
    pub fn snippet(&self, span: (usize, usize), pad: usize) -> String {
        let lines: Vec<&str> = self.source.lines().collect();
        if lines.is_empty() {
            return String::new();
        }
        let lo = span.0.saturating_sub(pad).max(1);
        let hi = (span.1 + pad).min(lines.len());
        (lo..=hi).map(|n| format!("{n:>4} | {}", lines[n - 1])).collect::<Vec<_>>().join("\n")
    }

    pub fn tool_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.tool_calls.iter().map(|c| c.tool_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResponse {
    pub answer_text: String,
    pub programs_used: Vec<String>,
    pub execution_summary: String,
    pub artifacts: Vec<String>,
}

/// A program plus the tools it uses that were not asked for.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub program: Program,
    pub unrequested: Vec<String>,
}

/// Values bound into the program-instruction template.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramBindings {
    pub query: String,
    pub tools: String,
    pub docs: String,
    pub observations: String,
    pub error: String,
    pub history: String,
}

impl ProgramBindings {
    pub fn new(query: &Query, tools: String, knowledge: &[Chunk], observations: Option<&str>) -> Self {
        Self {
            query: query.text.clone(),
            tools,
            docs: knowledge_block(knowledge),
            observations: observations.filter(|o| !o.trim().is_empty()).unwrap_or(NONE).to_string(),
            error: NONE.to_string(),
            history: NONE.to_string(),
        }
    }
}

/// Protocol digest of the selected tools followed by their extracted values.
pub fn tools_block(registry: &Registry, tool_ids: &[String], params: &[ParamSet]) -> Result<String, ToolhubError> {
    if tool_ids.is_empty() {
        return Ok("No tools are needed; use plain Python.".to_string());
    }
    let mut out = registry.protocol_digest(tool_ids)?;
    let bound: Vec<&ParamSet> = params.iter().filter(|p| !p.values.is_empty()).collect();
    if !bound.is_empty() {
        out.push_str("\n\nExtracted parameters:");
        for p in bound {
            out.push_str(&format!("\n[{}]\n{}", p.tool_id, p.to_lines()));
        }
    }
    Ok(out)
}

/// At most [`MAX_KNOWLEDGE_CHUNKS`] chunks, each under its provenance line.
pub fn knowledge_block(chunks: &[Chunk]) -> String {
    if chunks.is_empty() {
        return NONE.to_string();
    }
    chunks
        .iter()
        .take(MAX_KNOWLEDGE_CHUNKS)
        .map(|c| format!("{}\n{}", c.provenance(), c.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Returns the body of the first fenced block.
pub fn extract_code_block(text: &str) -> Result<String, ComposeError> {
    let mut lines = text.lines();
    let tag = loop {
        let line = lines.next().ok_or(ComposeError::NoCodeBlock)?;
        if let Some(rest) = line.trim_start().strip_prefix("```") {
            break rest.trim().to_ascii_lowercase();
        }
    };
    if !matches!(tag.as_str(), "" | "python" | "py" | "python3") {
        return Err(ComposeError::UnknownLanguage(tag));
    }
    let mut body = Vec::new();
    for line in lines {
        if line.trim() == "```" {
            let source = body.join("\n");
            if source.trim().is_empty() {
                return Err(ComposeError::NoCodeBlock);
            }
            return Ok(source + "\n");
        }
        body.push(line);
    }
    Err(ComposeError::NoCodeBlock)
}

/// One call per maximal run of consecutive lines carrying any of a tool's
/// import markers, over every registered tool.
pub fn annotate_tool_calls(source: &str, registry: &Registry, params: &[ParamSet]) -> Vec<ToolCall> {
    let lines: Vec<&str> = source.lines().collect();
    let mut calls = Vec::new();
    for tool in registry.iter() {
        let bound = params.iter().find(|p| p.tool_id == tool.tool_id).cloned();
        let mut run: Option<usize> = None;
        for (i, line) in lines.iter().enumerate() {
            match (tool.marks(line), run) {
                (true, None) => run = Some(i + 1),
                (false, Some(start)) => {
                    calls.push(ToolCall { tool_id: tool.tool_id.clone(), line_span: (start, i), bound_params: bound.clone() });
                    run = None;
                }
                _ => {}
            }
        }
        if let Some(start) = run {
            calls.push(ToolCall {
                tool_id: tool.tool_id.clone(),
                line_span: (start, lines.len()),
                bound_params: bound.clone(),
            });
        }
    }
    calls.sort_by(|a, b| a.line_span.cmp(&b.line_span).then_with(|| a.tool_id.cmp(&b.tool_id)));
    calls
}

/// Renders the program-instruction template, completes it and parses the
/// program out of the reply.
pub fn synthesize(
    bindings: &ProgramBindings,
    registry: &Registry,
    requested: &[String],
    params: &[ParamSet],
    revision_index: u32,
    gateway: &Gateway,
) -> Result<Generated, ComposeError> {
    let resp = gateway.complete_template(
        TemplateId::ProgramInstruction,
        &[
            ("query", &bindings.query),
            ("tools", &bindings.tools),
            ("docs", &bindings.docs),
            ("observations", &bindings.observations),
            ("error", &bindings.error),
            ("history", &bindings.history),
        ],
        PROGRAM_MAX_TOKENS,
    )?;
    let source = extract_code_block(&resp.text)?;
    let tool_calls = annotate_tool_calls(&source, registry, params);
    let origin = if revision_index == 0 { Origin::Generated } else { Origin::Revised };
    let program = Program::new(source, tool_calls, revision_index, origin);
    let unrequested: Vec<String> = program.tool_ids().into_iter().filter(|t| !requested.contains(t)).collect();
    if !unrequested.is_empty() {
        tracing::warn!(?unrequested, "program uses tools that were not selected");
    }
    Ok(Generated { program, unrequested })
}

/// First-draft program for `query`.
#[allow(clippy::too_many_arguments)]
pub fn generate_program(
    query: &Query,
    graph: &TaskGraph,
    tool_ids: &[String],
    params: &[ParamSet],
    knowledge: &[Chunk],
    observations: Option<&str>,
    registry: &Registry,
    gateway: &Gateway,
) -> Result<Generated, ComposeError> {
    if tool_ids.is_empty() && needs_tools(graph) {
        return Err(ComposeError::NoTools);
    }
    let bindings = ProgramBindings::new(query, tools_block(registry, tool_ids, params)?, knowledge, observations);
    synthesize(&bindings, registry, tool_ids, params, 0, gateway)
}

fn integration_observations(result: &ExecutionResult) -> String {
    let stdout = if result.stdout.trim().is_empty() { "(no output)" } else { result.stdout.trim_end() };
    let mut s = format!("stdout:\n{stdout}\n\nfiles written:");
    if result.artifacts.is_empty() {
        s.push_str(" none");
    }
    for a in &result.artifacts {
        s.push_str(&format!("\n- {a}"));
    }
    s
}

/// Final answer from a successful execution.
pub fn integrate(
    query: &Query,
    program: &Program,
    result: &ExecutionResult,
    gateway: &Gateway,
) -> Result<FinalResponse, ComposeError> {
    if result.status != ExecStatus::Success {
        return Err(ComposeError::NotSuccessful(result.status.as_str()));
    }
    let resp = gateway.complete_template(
        TemplateId::Integration,
        &[("query", &query.text), ("observations", &integration_observations(result))],
        INTEGRATION_MAX_TOKENS,
    )?;
    let mut answer_text = resp.text.trim().to_string();
    if answer_text.is_empty() {
        answer_text = fallback_answer(result);
    }
    Ok(FinalResponse {
        answer_text,
        programs_used: vec![program.program_id.clone()],
        execution_summary: result.summary(),
        artifacts: result.artifacts.clone(),
    })
}

fn fallback_answer(result: &ExecutionResult) -> String {
    let mut parts = vec!["The program ran successfully.".to_string()];
    if !result.stdout.trim().is_empty() {
        parts.push(format!("Output: {}", result.stdout.trim()));
    }
    if !result.artifacts.is_empty() {
        parts.push(format!("Files produced: {}.", result.artifacts.join(", ")));
    }
    parts.join(" ")
}
