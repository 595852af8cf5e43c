//! Thought / Action / Observation / Answer trace parsing.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::GatewayError;

static ACTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^([A-Za-z_][A-Za-z0-9_.\-]*)\s*\[(.*)\]\s*$").expect("valid regex")
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReactKind {
    Thought,
    Action,
    Observation,
    Answer,
}

impl ReactKind {
    fn marker(self) -> &'static str {
        match self {
            ReactKind::Thought => "Thought:",
            ReactKind::Action => "Action:",
            ReactKind::Observation => "Observation:",
            ReactKind::Answer => "Answer:",
        }
    }

    const ALL: [ReactKind; 4] =
        [ReactKind::Thought, ReactKind::Action, ReactKind::Observation, ReactKind::Answer];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactStep {
    pub kind: ReactKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_tool: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_args: Option<String>,
}

impl ReactStep {
    pub fn new(kind: ReactKind, text: impl Into<String>) -> Self {
        Self { kind, text: text.into(), action_tool: None, action_args: None }
    }

    pub fn action(tool: &str, args: &str) -> Self {
        Self {
            kind: ReactKind::Action,
            text: format!("{tool}[{args}]"),
            action_tool: Some(tool.to_string()),
            action_args: Some(args.to_string()),
        }
    }
}

fn split_marker(line: &str) -> Option<(ReactKind, &str)> {
    let trimmed = line.trim_start();
    ReactKind::ALL
        .into_iter()
        .find_map(|k| trimmed.strip_prefix(k.marker()).map(|rest| (k, rest)))
}

fn finish(step: &mut ReactStep) -> Result<(), GatewayError> {
    let trimmed_len = step.text.trim_end().len();
    step.text.truncate(trimmed_len);
    if step.kind == ReactKind::Action {
        let first = step.text.lines().next().unwrap_or("");
        let caps = ACTION
            .captures(first.trim())
            .ok_or_else(|| GatewayError::MalformedAction(first.to_string()))?;
        step.action_tool = Some(caps[1].to_string());
        step.action_args = Some(caps[2].to_string());
    }
    Ok(())
}

/// Splits model output into ReAct steps.
///
/// A step starts at a line whose first non-blank characters are one of the
/// markers `Thought:`, `Action:`, `Observation:` or `Answer:` (case-sensitive).
/// Other lines continue the current step; text before the first marker is
/// dropped. Action lines must read `Action: <tool_id>[<args>]`.
pub fn parse_react(text: &str) -> Result<Vec<ReactStep>, GatewayError> {
    let mut steps: Vec<ReactStep> = Vec::new();
    for line in text.lines() {
        if let Some((kind, rest)) = split_marker(line) {
            if let Some(prev) = steps.last_mut() {
                finish(prev)?;
            }
            steps.push(ReactStep::new(kind, rest.trim()));
        } else if let Some(cur) = steps.last_mut() {
            cur.text.push('\n');
            cur.text.push_str(line);
        }
    }
    if let Some(last) = steps.last_mut() {
        finish(last)?;
    }
    Ok(steps)
}

/// Inverse of [`parse_react`]: one marker-prefixed block per step.
pub fn format_react(steps: &[ReactStep]) -> String {
    steps
        .iter()
        .map(|s| format!("{} {}", s.kind.marker(), s.text))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_step_trace() {
        let steps = parse_react(
            "Thought: need ODE\nAction: ode_ivp_solver[f,c0]\nObservation: ok\nAnswer: done",
        )
        .unwrap();
        let kinds: Vec<_> = steps.iter().map(|s| s.kind).collect();
        assert_eq!(
            kinds,
            [ReactKind::Thought, ReactKind::Action, ReactKind::Observation, ReactKind::Answer]
        );
        assert_eq!(steps[1].action_tool.as_deref(), Some("ode_ivp_solver"));
        assert_eq!(steps[1].action_args.as_deref(), Some("f,c0"));
        assert_eq!(steps[0].action_tool, None);
        assert_eq!(steps[3].text, "done");
    }

    #[test]
    fn empty_input() {
        assert!(parse_react("").unwrap().is_empty());
    }

    #[test]
    fn action_without_brackets_is_malformed() {
        assert!(matches!(parse_react("Action: solver"), Err(GatewayError::MalformedAction(_))));
    }

    #[test]
    fn preamble_dropped_and_continuations_kept() {
        let steps = parse_react("Sure, here goes.\n  Thought: first\nmore detail\nNote: not a marker\nAnswer: 4").unwrap();
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[0].text, "first\nmore detail\nNote: not a marker");
    }

    #[test]
    fn markers_are_case_sensitive() {
        let steps = parse_react("Thought: a\nthought: b").unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].text, "a\nthought: b");
    }

    fn arb_step() -> impl Strategy<Value = ReactStep> {
        let text = "[a-z0-9 ,.]{0,12}( ?\n[a-z0-9 ]{1,8}){0,2}";
        prop_oneof![
            text.prop_map(|t| ReactStep::new(ReactKind::Thought, t)),
            text.prop_map(|t| ReactStep::new(ReactKind::Observation, t)),
            text.prop_map(|t| ReactStep::new(ReactKind::Answer, t)),
            ("[a-z_]{1,10}", "[a-z0-9, ]{0,10}").prop_map(|(tool, args)| ReactStep::action(&tool, &args)),
        ]
    }

    proptest! {
        #[test]
        fn parse_format_round_trip(steps in proptest::collection::vec(arb_step(), 0..6)) {
            let once = parse_react(&format_react(&steps)).unwrap();
            let twice = parse_react(&format_react(&once)).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
