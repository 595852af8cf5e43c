//! Numeric answer checking against worked-example gold values.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use procalc_core::text::normalize_unit;

/// How far past an anchor phrase the checked number may start, in bytes.
const ANCHOR_REACH: usize = 48;

// Numbers with optional thousands separators ("33,900") and exponent.
static NUMBER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?(?:[eE][-+]?\d+)?|[-+]?\.\d+").expect("valid regex")
});
/// Unit spellings run to at most this many words ("kg per hour").
const MAX_UNIT_WORDS: usize = 3;

#[derive(Debug, Error)]
pub enum GoldError {
    #[error("gold problem {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("gold fixtures: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldProblem {
    pub id: String,
    pub question_text: String,
    pub gold_value: f64,
    /// Unit the answer must carry; empty for dimensionless quantities.
    pub gold_unit: String,
    pub rel_tolerance: f64,
    /// Phrase the value must follow (within a few words). Required when the
    /// quantity has no unit, or when several values share the unit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<String>,
    /// Value printed by the source of the worked example, when it differs in
    /// derivation from `gold_value`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stated_value: Option<f64>,
}

impl GoldProblem {
    pub fn validate(&self) -> Result<(), GoldError> {
        let bad = |reason: &str| Err(GoldError::Invalid { id: self.id.clone(), reason: reason.into() });
        if !(self.rel_tolerance > 0.0 && self.rel_tolerance <= 0.1) {
            return bad("rel_tolerance must be in (0, 0.1]");
        }
        if self.gold_value == 0.0 || !self.gold_value.is_finite() {
            return bad("gold_value must be finite and non-zero");
        }
        if self.gold_unit.trim().is_empty() && self.anchor.is_none() {
            return bad("a dimensionless gold value needs an anchor phrase");
        }
        Ok(())
    }

    fn within(&self, v: f64) -> bool {
        (v - self.gold_value).abs() / self.gold_value.abs() <= self.rel_tolerance
    }

    /// True when the source's own figure misses the gold value by more than
    /// the tolerance.
    pub fn stated_is_discrepant(&self) -> bool {
        self.stated_value.is_some_and(|s| !self.within(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NoNumber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldCheck {
    pub verdict: Verdict,
    /// Candidate values in text order.
    pub extracted: Vec<f64>,
    /// The candidate closest to the gold value.
    pub closest: Option<f64>,
}

struct Candidate {
    value: f64,
    start: usize,
    /// Words after the number that may spell its unit.
    unit_words: Vec<String>,
}

fn unit_words(rest: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in rest.split_whitespace().take(MAX_UNIT_WORDS) {
        if !word.starts_with(|c: char| c.is_alphabetic() || c == '°') {
            break;
        }
        let trimmed = word.trim_end_matches(['.', ',', ';', ':', ')', '!', '?']);
        out.push(trimmed.to_string());
        if trimmed.len() != word.len() {
            break;
        }
    }
    out
}

fn candidates(text: &str) -> Vec<Candidate> {
    NUMBER
        .find_iter(text)
        .filter(|m| {
            // skip digits glued to a word, e.g. the 2 in "CO2" or "m3"
            !text[..m.start()].chars().next_back().is_some_and(|c| c.is_alphanumeric() || c == '_')
        })
        .filter_map(|m| {
            let value = m.as_str().replace(',', "").parse::<f64>().ok()?;
            Some(Candidate { value, start: m.start(), unit_words: unit_words(&text[m.end()..]) })
        })
        .collect()
}

fn unit_matches(words: &[String], gold: &str) -> bool {
    let gold = normalize_unit(gold);
    if gold.is_empty() {
        return true;
    }
    (1..=words.len()).any(|n| normalize_unit(&words[..n].join(" ")) == gold)
}

/// Finds the numbers in `response` that could state the gold quantity and
/// judges the closest one.
///
/// Without an anchor every number directly followed by the gold unit is a
/// candidate. With an anchor, only the first such number after each
/// occurrence of the anchor phrase (case-insensitive) counts.
pub fn check_gold(problem: &GoldProblem, response: &str) -> GoldCheck {
    let all = candidates(response);
    let unit_ok = |c: &Candidate| unit_matches(&c.unit_words, &problem.gold_unit);
    let picked: Vec<f64> = match &problem.anchor {
        None => all.iter().filter(|c| unit_ok(c)).map(|c| c.value).collect(),
        Some(anchor) => {
            let hay = response.to_lowercase();
            let needle = anchor.to_lowercase();
            let mut out = Vec::new();
            // lowercasing can shift byte offsets for non-ASCII text; only
            // trust offsets when the lengths agree
            if hay.len() == response.len() && !needle.is_empty() {
                for (pos, _) in hay.match_indices(&needle) {
                    let from = pos + needle.len();
                    if let Some(c) = all.iter().find(|c| c.start >= from && unit_ok(c)) {
                        if c.start - from <= ANCHOR_REACH {
                            out.push(c.value);
                        }
                    }
                }
            }
            out
        }
    };
    let closest = picked
        .iter()
        .copied()
        .min_by(|a, b| (a - problem.gold_value).abs().total_cmp(&(b - problem.gold_value).abs()));
    let verdict = match closest {
        None => Verdict::NoNumber,
        Some(v) if problem.within(v) => Verdict::Pass,
        Some(_) => Verdict::Fail,
    };
    GoldCheck { verdict, extracted: picked, closest }
}

/// A gold problem together with a response to judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldCase {
    pub problem: GoldProblem,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRow {
    pub id: String,
    pub gold_value: f64,
    pub gold_unit: String,
    pub check: GoldCheck,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stated_value: Option<f64>,
    pub stated_discrepant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldReport {
    pub rows: Vec<GoldRow>,
    pub passed: usize,
    pub total: usize,
}

impl GoldReport {
    pub fn all_pass(&self) -> bool {
        self.passed == self.total
    }

    pub fn discrepant(&self) -> Vec<&GoldRow> {
        self.rows.iter().filter(|r| r.stated_discrepant).collect()
    }
}

pub fn parse_cases(json: &str) -> Result<Vec<GoldCase>, GoldError> {
    let cases: Vec<GoldCase> = serde_json::from_str(json)?;
    for c in &cases {
        c.problem.validate()?;
    }
    Ok(cases)
}

/// The worked examples shipped with the crate.
pub fn bundled_cases() -> Vec<GoldCase> {
    parse_cases(include_str!("../fixtures/gold.json")).expect("bundled gold fixtures are valid")
}

pub fn run_gold(cases: &[GoldCase]) -> GoldReport {
    let rows: Vec<GoldRow> = cases
        .iter()
        .map(|c| GoldRow {
            id: c.problem.id.clone(),
            gold_value: c.problem.gold_value,
            gold_unit: c.problem.gold_unit.clone(),
            check: check_gold(&c.problem, &c.response),
            stated_value: c.problem.stated_value,
            stated_discrepant: c.problem.stated_is_discrepant(),
        })
        .collect();
    let passed = rows.iter().filter(|r| r.check.verdict == Verdict::Pass).count();
    GoldReport { total: rows.len(), passed, rows }
}
