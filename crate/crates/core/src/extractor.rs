//! Tool-call parameter extraction and stipulation checking.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError, TemplateId};
use crate::planner::Query;
use crate::text::{parse_number_prefix, units_compatible};
use crate::toolhub::{ArgSpec, SemanticType, ToolProtocol};

const EXTRACT_MAX_TOKENS: u32 = 256;

/// A parsed argument value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum ParamValue {
    Real(f64),
    Integer(i64),
    String(String),
    Array(Vec<f64>),
    Function(String),
    Boolean(bool),
}

impl ParamValue {
    pub fn semantic_type(&self) -> SemanticType {
        match self {
            ParamValue::Real(_) => SemanticType::Real,
            ParamValue::Integer(_) => SemanticType::Integer,
            ParamValue::String(_) => SemanticType::String,
            ParamValue::Array(_) => SemanticType::Array,
            ParamValue::Function(_) => SemanticType::Function,
            ParamValue::Boolean(_) => SemanticType::Boolean,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Real(v) => Some(*v),
            ParamValue::Integer(v) => Some(*v as f64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub raw_text: String,
    pub parsed: ParamValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub tool_id: String,
    pub values: BTreeMap<String, ParamEntry>,
    pub missing: Vec<String>,
}

impl ParamSet {
    pub fn empty(tool_id: impl Into<String>) -> Self {
        Self { tool_id: tool_id.into(), values: BTreeMap::new(), missing: Vec::new() }
    }

    /// `name = value [unit]` lines, in argument-name order.
    pub fn to_lines(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| match &v.unit {
                Some(u) => format!("{k} = {} {u}", v.raw_text),
                None => format!("{k} = {}", v.raw_text),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationReason {
    Missing,
    TypeMismatch,
    UnitMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub arg: String,
    pub reason: ViolationReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StipulationReport {
    pub consistent: Vec<String>,
    pub violations: Vec<Violation>,
}

/// Parses the right-hand side of `name = value [unit]` for `arg_spec`.
/// Returns `None` when the value does not type-check.
pub fn parse_value(arg_spec: &ArgSpec, rhs: &str) -> Option<(ParamValue, String, Option<String>)> {
    let rhs = rhs.trim();
    if rhs.is_empty() {
        return None;
    }
    let unit_of = |rest: &str| {
        let u = rest.trim().trim_start_matches('(').trim_end_matches(')').trim();
        (!u.is_empty()).then(|| u.to_string())
    };
    match arg_spec.semantic_type {
        SemanticType::Real => {
            let (v, used) = parse_number_prefix(rhs)?;
            let rest = &rhs[used..];
            // "2abc" is not a number followed by a unit
            if rest.starts_with(|c: char| c.is_ascii_alphanumeric()) && !rest.starts_with(char::is_alphabetic) {
                return None;
            }
            if !rest.is_empty() && !rest.starts_with(char::is_whitespace) && !rest.starts_with('(') {
                return None;
            }
            Some((ParamValue::Real(v), rhs[..used].to_string(), unit_of(rest)))
        }
        SemanticType::Integer => {
            let (v, used) = parse_number_prefix(rhs)?;
            let raw = &rhs[..used];
            if v.fract() != 0.0 || raw.contains(['.', 'e', 'E']) {
                return None;
            }
            let rest = &rhs[used..];
            if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
                return None;
            }
            Some((ParamValue::Integer(v as i64), raw.to_string(), unit_of(rest)))
        }
        SemanticType::Boolean => {
            let b = match rhs.to_ascii_lowercase().as_str() {
                "true" | "yes" => true,
                "false" | "no" => false,
                _ => return None,
            };
            Some((ParamValue::Boolean(b), rhs.to_string(), None))
        }
        SemanticType::Array => {
            let open = rhs.strip_prefix('[')?;
            let close = open.find(']')?;
            let inner = &open[..close];
            let mut items = Vec::new();
            for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let (v, used) = parse_number_prefix(part)?;
                if used != part.len() {
                    return None;
                }
                items.push(v);
            }
            Some((ParamValue::Array(items), rhs[..close + 2].to_string(), unit_of(&open[close + 1..])))
        }
        SemanticType::String => {
            let s = rhs.trim_matches('"').to_string();
            Some((ParamValue::String(s.clone()), s, None))
        }
        SemanticType::Function => Some((ParamValue::Function(rhs.to_string()), rhs.to_string(), None)),
    }
}

/// Parses model output made of `name = value [unit]` lines against `protocol`.
///
/// Unknown names are ignored and the first occurrence of a name wins.
/// Required arguments that are absent or fail to type-check are listed in
/// `missing`; optional ones are dropped.
pub fn parse_params(protocol: &ToolProtocol, text: &str) -> ParamSet {
    let mut set = ParamSet::empty(&protocol.tool_id);
    let mut rejected = Vec::new();
    for line in text.lines() {
        let line = line.trim().trim_start_matches(['-', '*']).trim();
        let Some((name, rhs)) = line.split_once('=') else { continue };
        let name = name.trim().trim_matches('`');
        let Some(arg_spec) = protocol.arg(name) else { continue };
        if set.values.contains_key(name) || rejected.contains(&name.to_string()) {
            continue;
        }
        match parse_value(arg_spec, rhs) {
            Some((parsed, raw_text, unit)) => {
                set.values.insert(name.to_string(), ParamEntry { raw_text, parsed, unit });
            }
            None => rejected.push(name.to_string()),
        }
    }
    set.missing = protocol
        .args
        .iter()
        .filter(|a| a.required && !set.values.contains_key(&a.name))
        .map(|a| a.name.clone())
        .collect();
    set
}

/// Asks the model to fill `protocol`'s arguments from the query text.
pub fn extract(query: &Query, protocol: &ToolProtocol, gateway: &Gateway) -> Result<ParamSet, GatewayError> {
    let tool = format!(
        "{} ({})\nOverview: {}\n{}",
        protocol.name,
        protocol.tool_id,
        protocol.overview,
        protocol.args_table()
    );
    let resp = gateway.complete_template(
        TemplateId::Extraction,
        &[("query", &query.text), ("tools", &tool)],
        EXTRACT_MAX_TOKENS,
    )?;
    Ok(parse_params(protocol, &resp.text))
}

/// One verdict per argument of `protocol`.
///
/// An argument is consistent when it is present, of the documented type and,
/// if both sides state a unit, in a compatible unit. A value without a unit
/// is taken to be in the documented unit. Absent optional arguments are
/// consistent.
pub fn check_stipulations(params: &ParamSet, protocol: &ToolProtocol) -> StipulationReport {
    debug_assert_eq!(params.tool_id, protocol.tool_id);
    let mut report = StipulationReport::default();
    for arg_spec in &protocol.args {
        let verdict = match params.values.get(&arg_spec.name) {
            None if arg_spec.required || params.missing.contains(&arg_spec.name) => {
                Some((ViolationReason::Missing, "no value extracted".to_string()))
            }
            None => None,
            Some(entry) if !type_matches(arg_spec.semantic_type, &entry.parsed) => Some((
                ViolationReason::TypeMismatch,
                format!("expected {}, got {}", arg_spec.semantic_type, entry.parsed.semantic_type()),
            )),
            Some(entry) => match (&arg_spec.unit, &entry.unit) {
                (Some(want), Some(got)) if !units_compatible(want, got) => {
                    Some((ViolationReason::UnitMismatch, format!("expected {want}, got {got}")))
                }
                _ => None,
            },
        };
        match verdict {
            None => report.consistent.push(arg_spec.name.clone()),
            Some((reason, detail)) => report.violations.push(Violation { arg: arg_spec.name.clone(), reason, detail }),
        }
    }
    report
}

fn type_matches(expected: SemanticType, value: &ParamValue) -> bool {
    match (expected, value) {
        // an integer literal is an acceptable real
        (SemanticType::Real, ParamValue::Integer(_)) => true,
        (t, v) => t == v.semantic_type(),
    }
}
