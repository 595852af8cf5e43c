//! Ablation runs: the same cases with one capability switched off at a time.
//!
//! Every (variant, case) pair gets fresh collaborators and an empty program
//! cache, then asks the query twice. The first run is judged against the
//! case's gold value; the second measures how many model calls a repeat
//! costs.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use procalc_core::config::{AblationFlags, AgentConfig, ConfigError};
use procalc_core::pipeline::{RunOptions, RunStatus};
use procalc_core::planner::Query;
use procalc_core::runtime::Components;

use crate::gold::{check_gold, GoldError, GoldProblem, Verdict};

pub const FULL: &str = "full";

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("cases file {path}: {reason}")]
    Cases { path: PathBuf, reason: String },
    #[error(transparent)]
    Gold(#[from] GoldError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("case {case}: cannot set up: {reason}")]
    Setup { case: String, reason: String },
    #[error("unknown ablation {0:?}")]
    UnknownVariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCase {
    pub id: String,
    pub config: PathBuf,
    pub query: String,
    pub gold: GoldProblem,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseSpec {
    id: String,
    config: PathBuf,
    #[serde(default)]
    query: Option<String>,
    #[serde(default)]
    query_file: Option<PathBuf>,
    gold: GoldProblem,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CasesFile {
    case: Vec<CaseSpec>,
}

/// Reads a TOML list of `[[case]]` tables. Paths are relative to the file.
pub fn load_cases(path: &Path) -> Result<Vec<AblationCase>, AblationError> {
    let err = |reason: String| AblationError::Cases { path: path.to_path_buf(), reason };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let file: CasesFile = toml::from_str(&text).map_err(|e| err(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for entry in file.case {
        entry.gold.validate()?;
        let query = match (entry.query, entry.query_file) {
            (Some(q), None) => q,
            (None, Some(f)) => std::fs::read_to_string(base.join(&f)).map_err(|e| err(format!("{}: {e}", f.display())))?,
            _ => return Err(err(format!("case {}: give exactly one of query, query_file", entry.id))),
        };
        out.push(AblationCase { id: entry.id, config: base.join(entry.config), query: query.trim().to_string(), gold: entry.gold });
    }
    if out.is_empty() {
        return Err(err("no cases".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variant {
    pub name: String,
    pub flags: AblationFlags,
}

/// The full agent followed by each single-flag ablation.
pub fn standard_variants() -> Vec<Variant> {
    let mut v = vec![Variant { name: FULL.into(), flags: AblationFlags::default() }];
    v.extend(
        AblationFlags::NAMES
            .iter()
            .map(|n| Variant { name: n.to_string(), flags: AblationFlags::only(n).expect("known flag") }),
    );
    v
}

/// The full agent plus the named ablations.
pub fn variants_named(names: &[String]) -> Result<Vec<Variant>, AblationError> {
    let mut v = vec![Variant { name: FULL.into(), flags: AblationFlags::default() }];
    for n in names {
        let flags = AblationFlags::only(n).ok_or_else(|| AblationError::UnknownVariant(n.clone()))?;
        v.push(Variant { name: n.clone(), flags });
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Succeeded,
    Exhausted,
    /// A stage failed before an answer existed (including replay misses).
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRun {
    pub case_id: String,
    pub status: CaseStatus,
    pub executions: u32,
    pub model_calls: usize,
    pub gold: Verdict,
    /// Model calls spent by the identical second query.
    pub repeat_calls: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CaseRun {
    pub fn passed(&self) -> bool {
        self.status == CaseStatus::Succeeded && self.gold == Verdict::Pass
    }

    pub fn passed_first_try(&self) -> bool {
        self.passed() && self.executions == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub name: String,
    pub pass_rate: f64,
    pub first_try_rate: f64,
    /// Mean over cases whose repeat run completed.
    pub mean_repeat_calls: Option<f64>,
    pub runs: Vec<CaseRun>,
}

impl VariantSummary {
    fn from_runs(name: &str, runs: Vec<CaseRun>) -> Self {
        let n = runs.len().max(1) as f64;
        let repeats: Vec<usize> = runs.iter().filter_map(|r| r.repeat_calls).collect();
        Self {
            name: name.into(),
            pass_rate: runs.iter().filter(|r| r.passed()).count() as f64 / n,
            first_try_rate: runs.iter().filter(|r| r.passed_first_try()).count() as f64 / n,
            mean_repeat_calls: (!repeats.is_empty())
                .then(|| repeats.iter().sum::<usize>() as f64 / repeats.len() as f64),
            runs,
        }
    }
}

/// Whether removing a capability made things worse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub variant: String,
    /// No better than the full agent on any measure.
    pub no_better: bool,
    /// Strictly worse on at least one measure.
    pub worse: bool,
    pub detail: String,
}

impl Direction {
    pub fn holds(&self) -> bool {
        self.no_better && self.worse
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: Vec<VariantSummary>,
    pub directions: Vec<Direction>,
}

impl AblationReport {
    pub fn all_directions_hold(&self) -> bool {
        self.directions.iter().all(Direction::holds)
    }

    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.name == name)
    }
}

const EPS: f64 = 1e-12;

fn compare(full: &VariantSummary, ablated: &VariantSummary) -> Direction {
    // missing repeat data counts as infinitely expensive
    let repeat = |v: &VariantSummary| v.mean_repeat_calls.unwrap_or(f64::INFINITY);
    let measures = [
        ("pass rate", full.pass_rate, ablated.pass_rate, true),
        ("first-try rate", full.first_try_rate, ablated.first_try_rate, true),
        ("repeat calls", repeat(full), repeat(ablated), false),
    ];
    let mut no_better = true;
    let mut worse = false;
    let mut notes = Vec::new();
    for (label, f, a, higher_is_better) in measures {
        let (better, lower) = if higher_is_better { (a > f + EPS, a < f - EPS) } else { (a < f - EPS, a > f + EPS) };
        if better {
            no_better = false;
            notes.push(format!("{label} improved ({f:.3} -> {a:.3})"));
        }
        if lower {
            worse = true;
            notes.push(format!("{label} {f:.3} -> {a:.3}"));
        }
    }
    if notes.is_empty() {
        notes.push("no change".into());
    }
    Direction { variant: ablated.name.clone(), no_better, worse, detail: notes.join("; ") }
}

fn run_case<E: Display>(
    case: &AblationCase,
    variant: &Variant,
    work: &Path,
    build: &impl Fn(&AgentConfig) -> Result<Components, E>,
) -> Result<CaseRun, AblationError> {
    let mut cfg = AgentConfig::load(&case.config)?;
    cfg.ablation = variant.flags;
    if work.exists() {
        std::fs::remove_dir_all(work)?;
    }
    std::fs::create_dir_all(work)?;
    cfg.cache.path = work.join("cache.jsonl");
    cfg.sandbox.artifact_dir = work.join("artifacts");
    let components = build(&cfg).map_err(|e| AblationError::Setup { case: case.id.clone(), reason: e.to_string() })?;
    let agent = components.agent(RunOptions::from_config(&cfg));
    let query = Query::new(&case.id, &case.query);
    let first = agent.run(&query);
    let mut run = match &first {
        Ok(rep) => CaseRun {
            case_id: case.id.clone(),
            status: match rep.status {
                RunStatus::Succeeded => CaseStatus::Succeeded,
                RunStatus::Exhausted => CaseStatus::Exhausted,
            },
            executions: rep.outcome.executions,
            model_calls: rep.model_calls,
            gold: rep
                .response
                .as_ref()
                .map_or(Verdict::NoNumber, |r| check_gold(&case.gold, &r.answer_text).verdict),
            repeat_calls: None,
            error: None,
        },
        Err(e) => CaseRun {
            case_id: case.id.clone(),
            status: CaseStatus::Error,
            executions: 0,
            model_calls: 0,
            gold: Verdict::NoNumber,
            repeat_calls: None,
            error: Some(e.to_string()),
        },
    };
    match agent.run(&query) {
        Ok(rep) => run.repeat_calls = Some(rep.model_calls),
        Err(e) if run.error.is_none() => run.error = Some(format!("repeat: {e}")),
        Err(_) => {}
    }
    Ok(run)
}

/// Runs every case under every variant. `build` turns the prepared config
/// into collaborators; [`Components::from_config`] is the usual choice.
/// Scratch state goes under `work_root/<variant>/<case>`.
pub fn run_ablation<E: Display>(
    cases: &[AblationCase],
    variants: &[Variant],
    work_root: &Path,
    build: impl Fn(&AgentConfig) -> Result<Components, E>,
) -> Result<AblationReport, AblationError> {
    let mut summaries = Vec::new();
    for v in variants {
        let mut runs = Vec::new();
        for c in cases {
            runs.push(run_case(c, v, &work_root.join(&v.name).join(&c.id), &build)?);
        }
        summaries.push(VariantSummary::from_runs(&v.name, runs));
    }
    let directions = match summaries.iter().find(|s| s.name == FULL) {
        Some(full) => summaries.iter().filter(|s| s.name != FULL).map(|s| compare(full, s)).collect(),
        None => Vec::new(),
    };
    Ok(AblationReport { variants: summaries, directions })
}
