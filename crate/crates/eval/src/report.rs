//! Text tables and acceptance thresholds for suite reports.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ablation::AblationReport;
use crate::gold::{GoldReport, Verdict};
use crate::needle::NeedleReport;
use crate::suite::MetricsReport;

/// Left-aligned first column, right-aligned others, two-space gutters.
pub fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut width: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (i, cell) in r.iter().enumerate().take(cols) {
            width[i] = width[i].max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = width[i]) } else { format!("{c:>w$}", w = width[i]) })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(headers.to_vec());
    out.push('\n');
    out.push_str(&width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn num(x: f64) -> String {
    format!("{x:.4}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "N/A".to_string(), num)
}

pub fn render_metrics(r: &MetricsReport) -> String {
    let mut out = format!("queries: {}\n\nplanning\n", r.queries);
    out.push_str(&table(
        &["metric", "value"],
        &[
            vec!["TUA".into(), opt(r.planning.tool_usage_awareness)],
            vec!["pass rate".into(), opt(r.planning.pass_rate)],
            vec!["accuracy".into(), opt(r.planning.accuracy)],
        ],
    ));
    if !r.retrieval.is_empty() {
        out.push_str(&format!("\ntool retrieval (NDCG grades: {:?})\n", r.ndcg_mode).to_lowercase());
        let rows: Vec<Vec<String>> =
            r.retrieval.iter().map(|x| vec![x.k.to_string(), num(x.recall), num(x.ndcg), num(x.comp)]).collect();
        out.push_str(&table(&["K", "Recall@K", "NDCG@K", "COMP@K"], &rows));
    }
    out.push_str("\ntool calling\n");
    let pooled = |p: Option<crate::metrics::Pooled>| match p {
        Some(p) => vec![num(p.value), p.counted.to_string(), p.excluded.to_string()],
        None => vec!["N/A".into(), "0".into(), r.queries.to_string()],
    };
    let mut rows = Vec::new();
    for (name, p) in [
        ("consistency", r.calling.consistency),
        ("param correctness", r.calling.param_correctness),
        ("error handling", r.calling.error_handling),
    ] {
        let mut row = vec![name.to_string()];
        row.extend(pooled(p));
        rows.push(row);
    }
    out.push_str(&table(&["metric", "value", "counted", "excluded"], &rows));
    if let Some(s) = &r.response {
        out.push_str("\nresponse\n");
        out.push_str(&table(&["BLEU", "ROUGE-L", "EM"], &[vec![num(s.bleu), num(s.rouge_l), num(s.exact_match)]]));
    }
    out
}

pub fn render_needle(r: &NeedleReport) -> String {
    let mut rows: Vec<Vec<String>> = r
        .queries
        .iter()
        .map(|q| vec![q.query_id.clone(), num(q.precision), num(q.recall), num(q.f1)])
        .collect();
    rows.push(vec!["mean".into(), num(r.mean_precision), num(r.mean_recall), num(r.mean_f1)]);
    format!(
        "needle retrieval, k = {}\n{}",
        r.k,
        table(&["query", "precision", "recall", "f1"], &rows)
    )
}

pub fn render_gold(r: &GoldReport) -> String {
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|row| {
            vec![
                row.id.clone(),
                format!("{} {}", row.gold_value, row.gold_unit).trim().to_string(),
                row.check.closest.map_or_else(|| "-".into(), |v| v.to_string()),
                match row.check.verdict {
                    Verdict::Pass => "pass",
                    Verdict::Fail => "fail",
                    Verdict::NoNumber => "no_number",
                }
                .into(),
                match (row.stated_value, row.stated_discrepant) {
                    (Some(s), true) => format!("DISCREPANT (stated {s})"),
                    (Some(s), false) => format!("agrees (stated {s})"),
                    (None, _) => "-".into(),
                },
            ]
        })
        .collect();
    format!(
        "{}{} of {} passed\n",
        table(&["problem", "gold", "found", "verdict", "source value"], &rows),
        r.passed,
        r.total
    )
}

pub fn render_ablation(r: &AblationReport) -> String {
    let rows: Vec<Vec<String>> = r
        .variants
        .iter()
        .map(|v| vec![v.name.clone(), num(v.pass_rate), num(v.first_try_rate), opt(v.mean_repeat_calls)])
        .collect();
    let mut out = table(&["variant", "pass rate", "first-try rate", "repeat calls"], &rows);
    if !r.directions.is_empty() {
        out.push('\n');
        for d in &r.directions {
            out.push_str(&format!(
                "{}: {} ({})\n",
                d.variant,
                if d.holds() { "worse than full" } else { "NOT worse than full" },
                d.detail
            ));
        }
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum ThresholdError {
    #[error("threshold {0:?}: expected <metric>>=<value> or <metric><=<value>")]
    Syntax(String),
    #[error("threshold on unknown or undefined metric {0:?}")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bound {
    AtLeast,
    AtMost,
}

/// An acceptance bound on one named metric, written `recall@5>=0.9`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub metric: String,
    pub bound: Bound,
    pub value: f64,
}

impl FromStr for Threshold {
    type Err = ThresholdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (metric, bound, rhs) = if let Some((m, v)) = s.split_once(">=") {
            (m, Bound::AtLeast, v)
        } else if let Some((m, v)) = s.split_once("<=") {
            (m, Bound::AtMost, v)
        } else {
            return Err(ThresholdError::Syntax(s.into()));
        };
        let value: f64 = rhs.trim().parse().map_err(|_| ThresholdError::Syntax(s.into()))?;
        let metric = metric.trim();
        if metric.is_empty() {
            return Err(ThresholdError::Syntax(s.into()));
        }
        Ok(Self { metric: metric.into(), bound, value })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub threshold: Threshold,
    pub actual: f64,
    pub met: bool,
}

/// Checks every threshold against `values`. A threshold on a metric the
/// report does not define is an error, not a silent pass.
pub fn check_thresholds(values: &[(String, f64)], thresholds: &[Threshold]) -> Result<Vec<ThresholdResult>, ThresholdError> {
    thresholds
        .iter()
        .map(|t| {
            let actual = values
                .iter()
                .find(|(n, _)| n == &t.metric)
                .map(|(_, v)| *v)
                .ok_or_else(|| ThresholdError::UnknownMetric(t.metric.clone()))?;
            let met = match t.bound {
                Bound::AtLeast => actual >= t.value - 1e-12,
                Bound::AtMost => actual <= t.value + 1e-12,
            };
            Ok(ThresholdResult { threshold: t.clone(), actual, met })
        })
        .collect()
}

pub fn needle_values(r: &NeedleReport) -> Vec<(String, f64)> {
    vec![
        ("precision".into(), r.mean_precision),
        ("recall".into(), r.mean_recall),
        ("f1".into(), r.mean_f1),
    ]
}
