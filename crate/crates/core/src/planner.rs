//! Query decomposition into a dependency graph of sub-tasks.
//!
//! The model is asked for one numbered line per sub-task:
//!
//! ```text
//! 1. Define the ODE function tools: yes
//! 2. Set initial conditions after: 1 tools: yes
//! ```
//!
//! `after:` lists prerequisite line numbers, `tools:` says whether the
//! sub-task needs an external tool (default yes). Lines that do not follow
//! the grammar are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, TemplateId};

/// Upper bound on sub-tasks in one plan.
pub const MAX_SUBTASKS: usize = 16;
const PLAN_MAX_TOKENS: u32 = 512;

static PLAN_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(\d+)[.)]\s+(.*?)(?:\s+after:\s*(\d+(?:\s*,\s*\d+)*))?(?:\s+tools:\s*(yes|no))?\s*$")
        .expect("valid regex")
});

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("query text is empty")]
    EmptyQuery,
    #[error("model produced no parseable sub-tasks")]
    EmptyPlan,
    #[error("plan has {0} sub-tasks; at most {MAX_SUBTASKS} allowed")]
    TooManySubtasks(usize),
    #[error("dependency cycle through sub-task {0}")]
    CycleDetected(String),
    #[error("sub-task {task} depends on unknown sub-task {target}")]
    UnknownDependency { task: String, target: String },
    #[error("sub-task {0} depends on itself")]
    SelfDependency(String),
    #[error("duplicate sub-task id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_hints: Option<Vec<String>>,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { id: id.into(), text: text.into(), context_hints: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubTask {
    pub id: String,
    pub description: String,
    pub needs_tools: bool,
    pub depends_on: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub query_id: String,
    pub nodes: Vec<SubTask>,
}

impl TaskGraph {
    /// Checks ids, references and acyclicity.
    pub fn new(query_id: impl Into<String>, nodes: Vec<SubTask>) -> Result<Self, PlanError> {
        let graph = Self { query_id: query_id.into(), nodes };
        graph.validate()?;
        Ok(graph)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.nodes.is_empty() {
            return Err(PlanError::EmptyPlan);
        }
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(PlanError::DuplicateId(n.id.clone()));
            }
        }
        for n in &self.nodes {
            for d in &n.depends_on {
                if d == &n.id {
                    return Err(PlanError::SelfDependency(n.id.clone()));
                }
                if !ids.contains(d.as_str()) {
                    return Err(PlanError::UnknownDependency { task: n.id.clone(), target: d.clone() });
                }
            }
        }
        topo_order(self).map(|_| ())
    }

    pub fn get(&self, id: &str) -> Option<&SubTask> {
        self.nodes.iter().find(|n| n.id == id)
    }
}

/// Kahn's algorithm; among ready nodes the smallest id goes first.
pub fn topo_order(graph: &TaskGraph) -> Result<Vec<SubTask>, PlanError> {
    let mut indegree: BTreeMap<&str, usize> = graph.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
    let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for n in &graph.nodes {
        for d in &n.depends_on {
            *indegree.get_mut(n.id.as_str()).expect("node present") += 1;
            dependents.entry(d.as_str()).or_default().push(n.id.as_str());
        }
    }
    let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(id, _)| *id).collect();
    let mut order = Vec::with_capacity(graph.nodes.len());
    while let Some(id) = ready.pop_first() {
        order.push(graph.get(id).expect("node present").clone());
        for dep in dependents.get(id).into_iter().flatten() {
            let deg = indegree.get_mut(dep).expect("node present");
            *deg -= 1;
            if *deg == 0 {
                ready.insert(dep);
            }
        }
    }
    if order.len() != graph.nodes.len() {
        let stuck = indegree.iter().find(|(_, d)| **d > 0).map(|(id, _)| id.to_string()).unwrap_or_default();
        return Err(PlanError::CycleDetected(stuck));
    }
    Ok(order)
}

/// True iff some sub-task needs a tool.
pub fn needs_tools(graph: &TaskGraph) -> bool {
    graph.nodes.iter().any(|n| n.needs_tools)
}

fn subtask_id(n: usize) -> String {
    format!("t{n:02}")
}

/// Parses the numbered plan grammar into a validated graph.
pub fn parse_plan(query_id: &str, text: &str) -> Result<TaskGraph, PlanError> {
    let mut nodes = Vec::new();
    let mut numbers = BTreeMap::new();
    let mut raw_deps = Vec::new();
    for line in text.lines() {
        let Some(caps) = PLAN_LINE.captures(line) else { continue };
        let description = caps[2].trim().to_string();
        if description.is_empty() {
            continue;
        }
        let number: usize = caps[1].parse().unwrap_or(0);
        let id = subtask_id(nodes.len() + 1);
        if numbers.insert(number, id.clone()).is_some() {
            return Err(PlanError::DuplicateId(number.to_string()));
        }
        let deps: Vec<usize> = caps
            .get(3)
            .map(|m| m.as_str().split(',').filter_map(|d| d.trim().parse().ok()).collect())
            .unwrap_or_default();
        let needs = caps.get(4).map(|m| m.as_str().eq_ignore_ascii_case("yes")).unwrap_or(true);
        raw_deps.push(deps);
        nodes.push(SubTask { id, description, needs_tools: needs, depends_on: Vec::new() });
    }
    if nodes.is_empty() {
        return Err(PlanError::EmptyPlan);
    }
    if nodes.len() > MAX_SUBTASKS {
        return Err(PlanError::TooManySubtasks(nodes.len()));
    }
    for (node, deps) in nodes.iter_mut().zip(raw_deps) {
        for d in deps {
            let target = numbers.get(&d).cloned().ok_or_else(|| PlanError::UnknownDependency {
                task: node.id.clone(),
                target: d.to_string(),
            })?;
            if !node.depends_on.contains(&target) {
                node.depends_on.push(target);
            }
        }
    }
    TaskGraph::new(query_id, nodes)
}

/// Asks the model for a plan and parses it.
pub fn plan(query: &Query, tool_overviews: &[String], gateway: &Gateway) -> Result<TaskGraph, PlanError> {
    if query.text.trim().is_empty() {
        return Err(PlanError::EmptyQuery);
    }
    let tools = if tool_overviews.is_empty() { "None.".to_string() } else { tool_overviews.join("\n") };
    let resp = gateway.complete_template(
        TemplateId::Planning,
        &[("query", &query.text), ("tools", &tools)],
        PLAN_MAX_TOKENS,
    )?;
    parse_plan(&query.id, &resp.text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedBackend;
    use proptest::prelude::*;

    fn node(id: &str, deps: &[&str]) -> SubTask {
        SubTask {
            id: id.into(),
            description: id.into(),
            needs_tools: false,
            depends_on: deps.iter().map(|d| d.to_string()).collect(),
        }
    }

    fn ids(order: &[SubTask]) -> Vec<&str> {
        order.iter().map(|n| n.id.as_str()).collect()
    }

    #[test]
    fn chain_order() {
        let g = TaskGraph::new("q", vec![node("c", &["b"]), node("a", &[]), node("b", &["a"])]).unwrap();
        assert_eq!(ids(&topo_order(&g).unwrap()), ["a", "b", "c"]);
    }

    #[test]
    fn diamond_breaks_ties_by_id() {
        let g = TaskGraph::new(
            "q",
            vec![node("d", &["b", "c"]), node("c", &["a"]), node("b", &["a"]), node("a", &[])],
        )
        .unwrap();
        assert_eq!(ids(&topo_order(&g).unwrap()), ["a", "b", "c", "d"]);
    }

    #[test]
    fn single_node() {
        let g = TaskGraph::new("q", vec![node("only", &[])]).unwrap();
        assert_eq!(ids(&topo_order(&g).unwrap()), ["only"]);
    }

    #[test]
    fn invalid_graphs() {
        assert!(matches!(TaskGraph::new("q", vec![]), Err(PlanError::EmptyPlan)));
        assert!(matches!(TaskGraph::new("q", vec![node("a", &["a"])]), Err(PlanError::SelfDependency(_))));
        assert!(matches!(TaskGraph::new("q", vec![node("a", &["z"])]), Err(PlanError::UnknownDependency { .. })));
        assert!(matches!(
            TaskGraph::new("q", vec![node("a", &["b"]), node("b", &["a"])]),
            Err(PlanError::CycleDetected(_))
        ));
        assert!(matches!(TaskGraph::new("q", vec![node("a", &[]), node("a", &[])]), Err(PlanError::DuplicateId(_))));
    }

    #[test]
    fn needs_tools_any() {
        let mut nodes = vec![node("a", &[]), node("b", &[]), node("c", &[])];
        let g = TaskGraph::new("q", nodes.clone()).unwrap();
        assert!(!needs_tools(&g));
        nodes[1].needs_tools = true;
        assert!(needs_tools(&TaskGraph::new("q", nodes).unwrap()));
    }

    #[test]
    fn parses_grammar_with_suffixes() {
        let text = "Here is the plan:\n1. Define the ODE function tools: yes\n2. Set initial conditions after: 1 tools: yes\n3) Solve the ODE using SciPy after: 1, 2\n4. Plot the results after: 3 tools: YES\nDone.";
        let g = parse_plan("cstr", text).unwrap();
        assert_eq!(g.nodes.len(), 4);
        assert_eq!(g.nodes[0].description, "Define the ODE function");
        assert_eq!(g.nodes[2].depends_on, ["t01", "t02"]);
        assert!(g.nodes[2].needs_tools);
        assert_eq!(g.nodes[3].depends_on, ["t03"]);
    }

    #[test]
    fn direct_answer_plan() {
        let g = parse_plan("q", "1. answer directly tools: no").unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert!(!g.nodes[0].needs_tools);
        assert_eq!(g.nodes[0].description, "answer directly");
    }

    #[test]
    fn prose_is_an_empty_plan() {
        assert!(matches!(parse_plan("q", "I would just compute it."), Err(PlanError::EmptyPlan)));
    }

    #[test]
    fn oversized_plan_rejected() {
        let text: String = (1..=17).map(|i| format!("{i}. step {i}\n")).collect();
        assert!(matches!(parse_plan("q", &text), Err(PlanError::TooManySubtasks(17))));
    }

    #[test]
    fn plan_uses_gateway_and_rejects_empty_query() {
        let gw = Gateway::new(ScriptedBackend::new("s", |r| {
            assert!(r.prompt_text.contains("### procalc:planning"));
            Some("1. answer directly tools: no".into())
        }));
        assert!(matches!(plan(&Query::new("q", "  "), &[], &gw), Err(PlanError::EmptyQuery)));
        assert_eq!(gw.call_count(), 0);
        let g = plan(&Query::new("q", "What is 2+2?"), &[], &gw).unwrap();
        assert_eq!(g.query_id, "q");
        assert_eq!(gw.call_count(), 1);
    }

    fn arb_dag() -> impl Strategy<Value = Vec<SubTask>> {
        (1usize..10).prop_flat_map(|n| {
            proptest::collection::vec(proptest::collection::vec(any::<proptest::sample::Index>(), 0..3), n).prop_map(
                move |edges| {
                    (0..n)
                        .map(|i| {
                            let mut deps: Vec<String> = if i == 0 {
                                vec![]
                            } else {
                                edges[i].iter().map(|ix| format!("n{}", ix.index(i))).collect()
                            };
                            deps.sort();
                            deps.dedup();
                            SubTask { id: format!("n{i}"), description: String::new(), needs_tools: true, depends_on: deps }
                        })
                        .collect()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn topo_order_respects_edges_and_ignores_insertion_order(nodes in arb_dag(), seed in any::<u64>()) {
            let g = TaskGraph::new("q", nodes.clone()).unwrap();
            let order = topo_order(&g).unwrap();
            prop_assert_eq!(order.len(), nodes.len());
            let pos: BTreeMap<_, _> = order.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
            for n in &nodes {
                for d in &n.depends_on {
                    prop_assert!(pos[d] < pos[&n.id]);
                }
            }
            let mut shuffled = nodes;
            let len = shuffled.len();
            shuffled.rotate_left((seed as usize) % len);
            if seed % 2 == 0 { shuffled.reverse(); }
            let again = topo_order(&TaskGraph::new("q", shuffled).unwrap()).unwrap();
            prop_assert_eq!(order, again);
        }
    }
}
