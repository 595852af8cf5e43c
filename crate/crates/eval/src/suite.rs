//! File-driven metric evaluation: predictions joined with gold records by
//! query id.
//!
//! Both files hold one JSON object per line.
//!
//! prediction: `{"query_id", "selected": [..], "tool_need"?, "task_completed"?,
//! "plan_correct"?, "calls"?: {"params_required", ...}, "response"?}`
//!
//! gold: `{"query_id", "ground_truth": [..], "grades"?: {tool: n}, "tool_need"?,
//! "reference"?}`

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    self, BleuConfig, CallJudgment, MetricError, NdcgMode, PlanJudgment, Pooled, RankedSelection, ResponseScores,
    RougeConfig, TextPair,
};

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("{file}:{line}: {reason}")]
    Input { file: String, line: usize, reason: String },
    #[error("{file}: {source}")]
    Io { file: String, source: std::io::Error },
    #[error("{metric}: {source}")]
    Metric { metric: String, source: MetricError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallCounts {
    #[serde(default)]
    pub params_required: u32,
    #[serde(default)]
    pub params_consistent: u32,
    #[serde(default)]
    pub params_correct: u32,
    #[serde(default)]
    pub errors_encountered: u32,
    #[serde(default)]
    pub errors_handled: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredRecord {
    pub query_id: String,
    #[serde(default)]
    pub selected: Vec<String>,
    pub tool_need: Option<bool>,
    pub task_completed: Option<bool>,
    pub plan_correct: Option<bool>,
    pub calls: Option<CallCounts>,
    pub response: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldRecord {
    pub query_id: String,
    #[serde(default)]
    pub ground_truth: Vec<String>,
    pub grades: Option<BTreeMap<String, u32>>,
    pub tool_need: Option<bool>,
    pub reference: Option<String>,
}

/// Parses JSON lines, keeping each record's line number.
pub fn parse_lines<T: serde::de::DeserializeOwned>(file: &str, text: &str) -> Result<Vec<(usize, T)>, SuiteError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line)
            .map_err(|e| SuiteError::Input { file: file.into(), line: i + 1, reason: e.to_string() })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

pub fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, SuiteError> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| SuiteError::Io { file: file.clone(), source })?;
    parse_lines(&file, &text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningScores {
    pub tool_usage_awareness: Option<f64>,
    pub pass_rate: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub comp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallingScores {
    pub consistency: Option<Pooled>,
    pub param_correctness: Option<Pooled>,
    pub error_handling: Option<Pooled>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub queries: usize,
    pub planning: PlanningScores,
    pub retrieval: Vec<RetrievalRow>,
    pub ndcg_mode: NdcgMode,
    pub calling: CallingScores,
    pub response: Option<ResponseScores>,
}

impl MetricsReport {
    /// Every defined score by name, e.g. `recall@5` or `bleu`.
    pub fn values(&self) -> Vec<(String, f64)> {
        let mut v = Vec::new();
        let mut push = |name: &str, x: Option<f64>| {
            if let Some(x) = x {
                v.push((name.to_string(), x));
            }
        };
        push("tua", self.planning.tool_usage_awareness);
        push("pass_rate", self.planning.pass_rate);
        push("accuracy", self.planning.accuracy);
        for r in &self.retrieval {
            push(&format!("recall@{}", r.k), Some(r.recall));
            push(&format!("ndcg@{}", r.k), Some(r.ndcg));
            push(&format!("comp@{}", r.k), Some(r.comp));
        }
        push("consistency", self.calling.consistency.map(|p| p.value));
        push("param_correctness", self.calling.param_correctness.map(|p| p.value));
        push("error_handling", self.calling.error_handling.map(|p| p.value));
        if let Some(r) = &self.response {
            push("bleu", Some(r.bleu));
            push("rouge_l", Some(r.rouge_l));
            push("exact_match", Some(r.exact_match));
        }
        v
    }
}

fn metric_err(metric: &str) -> impl FnOnce(MetricError) -> SuiteError + '_ {
    move |source| SuiteError::Metric { metric: metric.into(), source }
}

/// Pooled ratios that are undefined (every denominator zero) become `None`.
fn optional_pooled(r: Result<Pooled, MetricError>, metric: &str) -> Result<Option<Pooled>, SuiteError> {
    match r {
        Ok(p) => Ok(Some(p)),
        Err(MetricError::NoDenominator) => Ok(None),
        Err(e) => Err(metric_err(metric)(e)),
    }
}

fn optional_fraction(r: Result<f64, MetricError>, metric: &str) -> Result<Option<f64>, SuiteError> {
    match r {
        Ok(x) => Ok(Some(x)),
        Err(MetricError::EmptyInput) => Ok(None),
        Err(e) => Err(metric_err(metric)(e)),
    }
}

pub struct SuiteOptions {
    pub ks: Vec<usize>,
    pub ndcg_mode: NdcgMode,
    pub bleu: BleuConfig,
    pub rouge: RougeConfig,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { ks: vec![1, 3, 5], ndcg_mode: NdcgMode::Binary, bleu: BleuConfig::default(), rouge: RougeConfig::default() }
    }
}

/// Scores predictions against gold records. Every prediction needs a gold
/// record with the same id; gold records without a prediction are ignored.
pub fn evaluate(
    pred_file: &str,
    preds: &[(usize, PredRecord)],
    gold_file: &str,
    golds: &[(usize, GoldRecord)],
    opts: &SuiteOptions,
) -> Result<MetricsReport, SuiteError> {
    let mut by_id: HashMap<&str, &GoldRecord> = HashMap::new();
    for (line, g) in golds {
        if by_id.insert(&g.query_id, g).is_some() {
            return Err(SuiteError::Input { file: gold_file.into(), line: *line, reason: format!("duplicate query_id {}", g.query_id) });
        }
    }
    let mut selections = Vec::new();
    let mut plans = Vec::new();
    let mut completed = Vec::new();
    let mut correct = Vec::new();
    let mut calls = Vec::new();
    let mut pairs = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, p) in preds {
        let input_err = |reason: String| SuiteError::Input { file: pred_file.into(), line: *line, reason };
        if !seen.insert(p.query_id.as_str()) {
            return Err(input_err(format!("duplicate query_id {}", p.query_id)));
        }
        let g = by_id.get(p.query_id.as_str()).ok_or_else(|| input_err(format!("no gold record for {}", p.query_id)))?;
        if !g.ground_truth.is_empty() {
            let sel = RankedSelection {
                query_id: p.query_id.clone(),
                selected: p.selected.clone(),
                ground_truth: g.ground_truth.iter().cloned().collect(),
                grades: g.grades.clone(),
            };
            sel.validate().map_err(|e| input_err(e.to_string()))?;
            selections.push(sel);
        }
        if let (Some(pred), Some(actual)) = (p.tool_need, g.tool_need) {
            plans.push(PlanJudgment {
                tool_need_predicted: pred,
                tool_need_actual: actual,
                task_completed: p.task_completed.unwrap_or(false),
                plan_correct: p.plan_correct.unwrap_or(false),
            });
        }
        if let Some(c) = p.task_completed {
            completed.push(PlanJudgment { tool_need_predicted: false, tool_need_actual: false, task_completed: c, plan_correct: false });
        }
        if let Some(c) = p.plan_correct {
            correct.push(PlanJudgment { tool_need_predicted: false, tool_need_actual: false, task_completed: false, plan_correct: c });
        }
        if let Some(c) = p.calls {
            let j = CallJudgment {
                query_id: p.query_id.clone(),
                params_required: c.params_required,
                params_consistent: c.params_consistent,
                params_correct: c.params_correct,
                errors_encountered: c.errors_encountered,
                errors_handled: c.errors_handled,
            };
            j.validate().map_err(|e| input_err(e.to_string()))?;
            calls.push(j);
        }
        if let (Some(resp), Some(reference)) = (&p.response, &g.reference) {
            if reference.trim().is_empty() {
                return Err(input_err("gold reference is empty".into()));
            }
            pairs.push(TextPair::new(resp, reference));
        }
    }

    let mut retrieval = Vec::new();
    if !selections.is_empty() {
        for &k in &opts.ks {
            retrieval.push(RetrievalRow {
                k,
                recall: metrics::recall_at_k(&selections, k).map_err(metric_err("recall"))?,
                ndcg: metrics::ndcg_at_k(&selections, k, opts.ndcg_mode).map_err(metric_err("ndcg"))?,
                comp: metrics::comp_at_k(&selections, k).map_err(metric_err("comp"))?,
            });
        }
    }
    let response = if pairs.is_empty() {
        None
    } else {
        Some(metrics::response_scores(&pairs, &opts.bleu, &opts.rouge).map_err(metric_err("response"))?)
    };
    Ok(MetricsReport {
        queries: preds.len(),
        planning: PlanningScores {
            tool_usage_awareness: optional_fraction(metrics::tool_usage_awareness(&plans), "tua")?,
            pass_rate: optional_fraction(metrics::pass_rate(&completed), "pass_rate")?,
            accuracy: optional_fraction(metrics::accuracy(&correct), "accuracy")?,
        },
        retrieval,
        ndcg_mode: opts.ndcg_mode,
        calling: CallingScores {
            consistency: optional_pooled(metrics::consistency(&calls), "consistency")?,
            param_correctness: optional_pooled(metrics::param_correctness(&calls), "param_correctness")?,
            error_handling: optional_pooled(metrics::error_handling(&calls), "error_handling")?,
        },
        response,
    })
}
