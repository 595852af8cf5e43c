//! Reason-act-observe loop run before program generation.
//!
//! Each turn is one model call. The reply is cut after its first Action (or
//! Answer); the action is carried out here and its Observation appended to
//! the trajectory for the next turn.

use serde::{Deserialize, Serialize};

use crate::gateway::{format_react, parse_react, Gateway, GatewayError, ReactKind, ReactStep, TemplateId};
use crate::planner::Query;
use crate::rag::{EmbeddingBackend, VectorIndex};
use crate::toolhub::Registry;

pub const MAX_REACT_TURNS: usize = 4;
pub const REACT_MAX_TOKENS: u32 = 512;
const SEARCH_HITS: usize = 2;

/// Retrieval available to `search_knowledge`.
pub struct Knowledge<'a> {
    pub index: &'a VectorIndex,
    pub backend: &'a dyn EmbeddingBackend,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReactTrace {
    pub steps: Vec<ReactStep>,
    pub answer: Option<String>,
    pub turns: usize,
}

impl ReactTrace {
    pub fn render(&self) -> String {
        format_react(&self.steps)
    }

    /// Tool ids looked up with `lookup_docs`, in order.
    pub fn consulted_tools(&self) -> Vec<String> {
        self.steps
            .iter()
            .filter(|s| s.action_tool.as_deref() == Some("lookup_docs"))
            .filter_map(|s| s.action_args.clone())
            .collect()
    }
}

fn observe(action: &str, args: &str, registry: &Registry, knowledge: Option<&Knowledge>) -> String {
    let args = args.trim();
    match action {
        "lookup_docs" => match registry.get(args) {
            Some(t) => t.docs.trim().to_string(),
            None => format!("No tool with id `{args}`."),
        },
        "select_tool" => match registry.select(args, 3) {
            Ok(refs) => refs.iter().map(|r| format!("{} ({:.2})", r.tool_id, r.score)).collect::<Vec<_>>().join(", "),
            Err(e) => format!("Tool selection failed: {e}"),
        },
        "search_knowledge" => match knowledge {
            None => "The reference library is not available for this run.".to_string(),
            Some(k) if k.index.is_empty() => "The reference library is empty.".to_string(),
            Some(k) => match k.index.retrieve(args, SEARCH_HITS, k.backend, None) {
                Ok(hits) => hits
                    .iter()
                    .map(|h| format!("{}\n{}", h.chunk.provenance(), h.chunk.text))
                    .collect::<Vec<_>>()
                    .join("\n"),
                Err(e) => format!("Search failed: {e}"),
            },
        },
        other => format!("Unknown action `{other}`; use lookup_docs, search_knowledge or select_tool."),
    }
}

/// Runs up to [`MAX_REACT_TURNS`] turns, stopping at an Answer or at a turn
/// that proposes no action.
pub fn run_react(
    query: &Query,
    tool_ids: &[String],
    registry: &Registry,
    knowledge: Option<&Knowledge>,
    gateway: &Gateway,
) -> Result<ReactTrace, GatewayError> {
    let tools = tool_ids
        .iter()
        .filter_map(|id| registry.get(id))
        .map(|t| format!("{} ({}): {}", t.name, t.tool_id, t.overview))
        .collect::<Vec<_>>()
        .join("\n");
    let tools = if tools.is_empty() { "None.".to_string() } else { tools };
    let mut trace = ReactTrace::default();
    while trace.turns < MAX_REACT_TURNS {
        trace.turns += 1;
        let so_far = if trace.steps.is_empty() { "None.".to_string() } else { trace.render() };
        let resp = gateway.complete_template(
            TemplateId::React,
            &[("query", &query.text), ("tools", &tools), ("observations", &so_far)],
            REACT_MAX_TOKENS,
        )?;
        let steps = match parse_react(&resp.text) {
            Ok(s) => s,
            Err(GatewayError::MalformedAction(line)) => {
                trace.steps.push(ReactStep::new(
                    ReactKind::Observation,
                    format!("Could not read the action `{line}`; write it as name[arguments]."),
                ));
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut acted = false;
        for step in steps {
            match step.kind {
                // observations come from us, not the model
                ReactKind::Observation => continue,
                ReactKind::Thought => trace.steps.push(step),
                ReactKind::Answer => {
                    trace.answer = Some(step.text.clone());
                    trace.steps.push(step);
                    return Ok(trace);
                }
                ReactKind::Action => {
                    let tool = step.action_tool.clone().unwrap_or_default();
                    let args = step.action_args.clone().unwrap_or_default();
                    trace.steps.push(step);
                    trace.steps.push(ReactStep::new(ReactKind::Observation, observe(&tool, &args, registry, knowledge)));
                    acted = true;
                    break;
                }
            }
        }
        if !acted {
            break;
        }
    }
    Ok(trace)
}
