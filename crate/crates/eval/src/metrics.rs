//! Planning, tool-retrieval, tool-calling and response-quality metrics.
//!
//! All functions are pure. Fractions are returned as `f64` in `[0, 1]`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use procalc_core::text::metric_tokens;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("no judgments to score")]
    EmptyInput,
    #[error("k must be >= 1")]
    ZeroK,
    #[error("query {0}: ground truth is empty")]
    EmptyGroundTruth(String),
    #[error("query {0}: no relevance grades (graded mode)")]
    MissingGrades(String),
    #[error("query {query}: {reason}")]
    InvalidSelection { query: String, reason: String },
    #[error("query {query}: {reason}")]
    InvalidJudgment { query: String, reason: String },
    #[error("every judgment has a zero denominator")]
    NoDenominator,
    #[error("invalid metric config: {0}")]
    Config(String),
    #[error("text pair {0}: reference is empty")]
    EmptyReference(usize),
}

/// Tools ranked for one query against the tools it actually needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSelection {
    pub query_id: String,
    pub selected: Vec<String>,
    pub ground_truth: BTreeSet<String>,
    /// Graded relevance; absent for binary relevance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grades: Option<BTreeMap<String, u32>>,
}

impl RankedSelection {
    pub fn new(query_id: &str, selected: &[&str], ground_truth: &[&str]) -> Self {
        Self {
            query_id: query_id.into(),
            selected: selected.iter().map(|s| s.to_string()).collect(),
            ground_truth: ground_truth.iter().map(|s| s.to_string()).collect(),
            grades: None,
        }
    }

    pub fn with_grades(mut self, grades: &[(&str, u32)]) -> Self {
        self.grades = Some(grades.iter().map(|(t, g)| (t.to_string(), *g)).collect());
        self
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        let bad = |reason: String| Err(MetricError::InvalidSelection { query: self.query_id.clone(), reason });
        let mut seen = BTreeSet::new();
        if let Some(dup) = self.selected.iter().find(|t| !seen.insert(t.as_str())) {
            return bad(format!("tool {dup} selected twice"));
        }
        if let Some(g) = &self.grades {
            if let Some(k) = g.keys().find(|k| !self.ground_truth.contains(*k) && !seen.contains(k.as_str())) {
                return bad(format!("grade for {k}, which is neither selected nor relevant"));
            }
        }
        Ok(())
    }

    fn top_k(&self, k: usize) -> &[String] {
        &self.selected[..k.min(self.selected.len())]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanJudgment {
    pub tool_need_predicted: bool,
    pub tool_need_actual: bool,
    pub task_completed: bool,
    pub plan_correct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CallJudgment {
    pub query_id: String,
    pub params_required: u32,
    pub params_consistent: u32,
    pub params_correct: u32,
    pub errors_encountered: u32,
    pub errors_handled: u32,
}

impl CallJudgment {
    pub fn validate(&self) -> Result<(), MetricError> {
        let bad = |reason: &str| Err(MetricError::InvalidJudgment { query: self.query_id.clone(), reason: reason.into() });
        if self.params_consistent > self.params_required {
            return bad("more consistent parameters than required");
        }
        if self.params_correct > self.params_required {
            return bad("more correct parameters than required");
        }
        if self.errors_handled > self.errors_encountered {
            return bad("more errors handled than encountered");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPair {
    pub candidate: String,
    pub reference: String,
}

impl TextPair {
    pub fn new(candidate: &str, reference: &str) -> Self {
        Self { candidate: candidate.into(), reference: reference.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub weights: Vec<f64>,
    /// Stand-in precision for orders with no clipped match.
    pub epsilon: f64,
}

pub const BLEU_EPSILON: f64 = 1e-9;

impl BleuConfig {
    /// Uniform weights over orders `1..=max_n`.
    pub fn uniform(max_n: usize) -> Self {
        Self { max_n, weights: vec![1.0 / max_n.max(1) as f64; max_n], epsilon: BLEU_EPSILON }
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if self.max_n == 0 || self.weights.len() != self.max_n {
            return Err(MetricError::Config("bleu needs one weight per order".into()));
        }
        if self.weights.iter().any(|w| *w < 0.0) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(MetricError::Config("bleu weights must be non-negative and sum to 1".into()));
        }
        // written negated so NaN is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.epsilon > 0.0) {
            return Err(MetricError::Config("bleu epsilon must be positive".into()));
        }
        Ok(())
    }
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self::uniform(4)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeConfig {
    pub beta: f64,
}

impl Default for RougeConfig {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> Result<f64, MetricError> {
    let n = values.len();
    if n == 0 {
        return Err(MetricError::EmptyInput);
    }
    Ok(values.sum::<f64>() / n as f64)
}

fn fraction(flags: impl ExactSizeIterator<Item = bool>) -> Result<f64, MetricError> {
    mean(flags.map(|b| if b { 1.0 } else { 0.0 }))
}

/// Share of queries whose need for tools was identified correctly.
pub fn tool_usage_awareness(judgments: &[PlanJudgment]) -> Result<f64, MetricError> {
    fraction(judgments.iter().map(|j| j.tool_need_predicted == j.tool_need_actual))
}

pub fn pass_rate(judgments: &[PlanJudgment]) -> Result<f64, MetricError> {
    fraction(judgments.iter().map(|j| j.task_completed))
}

pub fn accuracy(judgments: &[PlanJudgment]) -> Result<f64, MetricError> {
    fraction(judgments.iter().map(|j| j.plan_correct))
}

fn check_k(k: usize) -> Result<(), MetricError> {
    if k == 0 {
        Err(MetricError::ZeroK)
    } else {
        Ok(())
    }
}

/// Recall of one query's top-`k`.
pub fn query_recall(sel: &RankedSelection, k: usize) -> Result<f64, MetricError> {
    check_k(k)?;
    if sel.ground_truth.is_empty() {
        return Err(MetricError::EmptyGroundTruth(sel.query_id.clone()));
    }
    let hits = sel.top_k(k).iter().filter(|t| sel.ground_truth.contains(*t)).count();
    Ok(hits as f64 / sel.ground_truth.len() as f64)
}

pub fn recall_at_k(selections: &[RankedSelection], k: usize) -> Result<f64, MetricError> {
    let per: Vec<f64> = selections.iter().map(|s| query_recall(s, k)).collect::<Result<_, _>>()?;
    mean(per.into_iter())
}

/// How relevance grades are obtained for NDCG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NdcgMode {
    /// Grade 1 for ground-truth tools, 0 otherwise; supplied grades ignored.
    #[default]
    Binary,
    /// Supplied integer grades; tools without a grade count as 0.
    Graded,
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade.min(1023) as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    // rank is 1-based
    ((rank + 1) as f64).log2()
}

pub fn query_ndcg(sel: &RankedSelection, k: usize, mode: NdcgMode) -> Result<f64, MetricError> {
    check_k(k)?;
    let grades: HashMap<&str, u32> = match mode {
        NdcgMode::Binary => sel.ground_truth.iter().map(|t| (t.as_str(), 1)).collect(),
        NdcgMode::Graded => match &sel.grades {
            Some(g) => g.iter().map(|(t, v)| (t.as_str(), *v)).collect(),
            None => return Err(MetricError::MissingGrades(sel.query_id.clone())),
        },
    };
    let dcg: f64 = sel
        .top_k(k)
        .iter()
        .enumerate()
        .map(|(i, t)| gain(grades.get(t.as_str()).copied().unwrap_or(0)) / discount(i + 1))
        .sum();
    let mut ideal: Vec<u32> = grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, g)| gain(*g) / discount(i + 1)).sum();
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok((dcg / idcg).min(1.0))
}

pub fn ndcg_at_k(selections: &[RankedSelection], k: usize, mode: NdcgMode) -> Result<f64, MetricError> {
    let per: Vec<f64> = selections.iter().map(|s| query_ndcg(s, k, mode)).collect::<Result<_, _>>()?;
    mean(per.into_iter())
}

/// 1 when every ground-truth tool is in the top-`k`.
pub fn query_comp(sel: &RankedSelection, k: usize) -> Result<f64, MetricError> {
    check_k(k)?;
    let top = sel.top_k(k);
    Ok(if sel.ground_truth.iter().all(|t| top.contains(t)) { 1.0 } else { 0.0 })
}

pub fn comp_at_k(selections: &[RankedSelection], k: usize) -> Result<f64, MetricError> {
    let per: Vec<f64> = selections.iter().map(|s| query_comp(s, k)).collect::<Result<_, _>>()?;
    mean(per.into_iter())
}

/// A ratio pooled over all judgments, plus how many judgments were left out
/// because their own denominator was zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pooled {
    pub value: f64,
    pub counted: usize,
    pub excluded: usize,
}

fn pooled(judgments: &[CallJudgment], f: impl Fn(&CallJudgment) -> (u32, u32)) -> Result<Pooled, MetricError> {
    let (mut num, mut den, mut counted) = (0u64, 0u64, 0usize);
    for j in judgments {
        j.validate()?;
        let (n, d) = f(j);
        if d > 0 {
            num += u64::from(n);
            den += u64::from(d);
            counted += 1;
        }
    }
    if den == 0 {
        return Err(MetricError::NoDenominator);
    }
    Ok(Pooled { value: num as f64 / den as f64, counted, excluded: judgments.len() - counted })
}

/// Parameters consistent with the tool's documentation, over parameters required.
pub fn consistency(judgments: &[CallJudgment]) -> Result<Pooled, MetricError> {
    pooled(judgments, |j| (j.params_consistent, j.params_required))
}

pub fn param_correctness(judgments: &[CallJudgment]) -> Result<Pooled, MetricError> {
    pooled(judgments, |j| (j.params_correct, j.params_required))
}

pub fn error_handling(judgments: &[CallJudgment]) -> Result<Pooled, MetricError> {
    pooled(judgments, |j| (j.errors_handled, j.errors_encountered))
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Sentence BLEU with clipped n-gram precisions and brevity penalty.
///
/// Orders longer than both texts carry no evidence either way; they are
/// dropped and the remaining weights renormalized, so identical short texts
/// still score exactly 1. An order with no clipped match (including one the
/// candidate is too short for) uses `epsilon` as its precision.
pub fn bleu(pair: &TextPair, config: &BleuConfig) -> Result<f64, MetricError> {
    config.validate()?;
    if pair.reference.trim().is_empty() {
        return Err(MetricError::EmptyReference(0));
    }
    let cand = metric_tokens(&pair.candidate);
    let refr = metric_tokens(&pair.reference);
    if cand.is_empty() {
        return Ok(0.0);
    }
    let (c, r) = (cand.len(), refr.len());
    let mut log_sum = 0.0;
    let mut weight_sum = 0.0;
    for n in 1..=config.max_n {
        let w = config.weights[n - 1];
        if n > c && n > r {
            continue;
        }
        let p = if n > c {
            config.epsilon
        } else {
            let cc = ngram_counts(&cand, n);
            let rc = ngram_counts(&refr, n);
            let clipped: usize = cc.iter().map(|(g, k)| (*k).min(rc.get(g).copied().unwrap_or(0))).sum();
            let total = c + 1 - n;
            if clipped == 0 {
                config.epsilon
            } else {
                clipped as f64 / total as f64
            }
        };
        log_sum += w * p.ln();
        weight_sum += w;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    if weight_sum == 0.0 {
        return Ok(bp);
    }
    Ok((bp * (log_sum / weight_sum).exp()).clamp(0.0, 1.0))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS precision, recall and their F-beta combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

pub fn rouge_l_detail(pair: &TextPair, config: &RougeConfig) -> Result<RougeScore, MetricError> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(config.beta > 0.0) {
        return Err(MetricError::Config("rouge beta must be positive".into()));
    }
    if pair.reference.trim().is_empty() {
        return Err(MetricError::EmptyReference(0));
    }
    let cand = metric_tokens(&pair.candidate);
    let refr = metric_tokens(&pair.reference);
    let lcs = lcs_len(&cand, &refr);
    if lcs == 0 {
        return Ok(RougeScore { precision: 0.0, recall: 0.0, f: 0.0 });
    }
    let p = lcs as f64 / cand.len() as f64;
    let r = lcs as f64 / refr.len() as f64;
    let b2 = config.beta * config.beta;
    let f = (1.0 + b2) * p * r / (r + b2 * p);
    Ok(RougeScore { precision: p, recall: r, f: f.min(1.0) })
}

pub fn rouge_l(pair: &TextPair, config: &RougeConfig) -> Result<f64, MetricError> {
    rouge_l_detail(pair, config).map(|s| s.f)
}

/// Share of pairs equal after trimming trailing whitespace.
pub fn exact_match(pairs: &[TextPair]) -> Result<f64, MetricError> {
    fraction(pairs.iter().map(|p| p.candidate.trim_end() == p.reference.trim_end()))
}

/// Corpus means of BLEU and ROUGE-L plus exact match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseScores {
    pub bleu: f64,
    pub rouge_l: f64,
    pub exact_match: f64,
}

pub fn response_scores(pairs: &[TextPair], bleu_cfg: &BleuConfig, rouge_cfg: &RougeConfig) -> Result<ResponseScores, MetricError> {
    for (i, p) in pairs.iter().enumerate() {
        if p.reference.trim().is_empty() {
            return Err(MetricError::EmptyReference(i));
        }
    }
    let b: Vec<f64> = pairs.iter().map(|p| bleu(p, bleu_cfg)).collect::<Result<_, _>>()?;
    let r: Vec<f64> = pairs.iter().map(|p| rouge_l(p, rouge_cfg)).collect::<Result<_, _>>()?;
    Ok(ResponseScores { bleu: mean(b.into_iter())?, rouge_l: mean(r.into_iter())?, exact_match: exact_match(pairs)? })
}
