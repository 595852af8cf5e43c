//! Prompt templates with `{name}` placeholders.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::GatewayError;

/// Version of the bundled template files. Replay stores are recorded against
/// one version; bumping it invalidates them by design.
pub const TEMPLATE_VERSION: &str = "v1";

/// Placeholder names a template body may use.
pub const PLACEHOLDERS: &[&str] = &["query", "tools", "docs", "error", "history", "observations"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ProgramInstruction,
    AttributionInstruction,
    Planning,
    Integration,
    Extraction,
    React,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::ProgramInstruction,
        TemplateId::AttributionInstruction,
        TemplateId::Planning,
        TemplateId::Integration,
        TemplateId::Extraction,
        TemplateId::React,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::ProgramInstruction => "program_instruction",
            TemplateId::AttributionInstruction => "attribution_instruction",
            TemplateId::Planning => "planning",
            TemplateId::Integration => "integration",
            TemplateId::Extraction => "extraction",
            TemplateId::React => "react",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown template id {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Text(String),
    Slot(&'static str),
}

/// A parsed template body.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    body: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    /// Parses `body`. Any `{identifier}` must name a declared placeholder;
    /// braces around anything else are literal text.
    pub fn parse(id: TemplateId, body: impl Into<String>) -> Result<Self, GatewayError> {
        let body = body.into();
        let mut segments = Vec::new();
        let mut text = String::new();
        let mut rest = body.as_str();
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let ident_len = after
                .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                .unwrap_or(after.len());
            if ident_len > 0 && after[ident_len..].starts_with('}') {
                let name = &after[..ident_len];
                let Some(slot) = PLACEHOLDERS.iter().find(|p| **p == name) else {
                    return Err(GatewayError::UnknownPlaceholder {
                        template: id.to_string(),
                        name: name.to_string(),
                    });
                };
                text.push_str(&rest[..open]);
                if !text.is_empty() {
                    segments.push(Segment::Text(std::mem::take(&mut text)));
                }
                segments.push(Segment::Slot(slot));
                rest = &after[ident_len + 1..];
            } else {
                text.push_str(&rest[..=open]);
                rest = after;
            }
        }
        text.push_str(rest);
        if !text.is_empty() {
            segments.push(Segment::Text(text));
        }
        Ok(Self { id, body, segments })
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Placeholder names used by this template, in first-use order.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = Vec::new();
        for seg in &self.segments {
            if let Segment::Slot(name) = seg {
                if !out.contains(name) {
                    out.push(name);
                }
            }
        }
        out
    }

    /// Substitutes every placeholder. Extra bindings are ignored.
    ///
    /// Bound values are inserted verbatim except that a declared placeholder
    /// spelled inside a value (`{query}`) is defused to `{ query }`, so the
    /// output never carries an unrendered slot.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, GatewayError> {
        let map: BTreeMap<&str, &str> = bindings.iter().copied().collect();
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(name) => {
                    let value = map.get(name).ok_or_else(|| GatewayError::MissingBinding {
                        template: self.id.to_string(),
                        name: name.to_string(),
                    })?;
                    out.push_str(&defuse(value));
                }
            }
        }
        Ok(out)
    }
}

fn defuse(value: &str) -> String {
    let mut v = value.to_string();
    for name in PLACEHOLDERS {
        let slot = format!("{{{name}}}");
        if v.contains(&slot) {
            v = v.replace(&slot, &format!("{{ {name} }}"));
        }
    }
    v
}

/// One template per [`TemplateId`].
#[derive(Debug, Clone)]
pub struct TemplateSet {
    version: String,
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl TemplateSet {
    /// Templates compiled into the binary (version [`TEMPLATE_VERSION`]).
    pub fn bundled() -> Self {
        let sources: [(TemplateId, &str); 6] = [
            (TemplateId::ProgramInstruction, include_str!("../../assets/templates/v1/program_instruction.txt")),
            (TemplateId::AttributionInstruction, include_str!("../../assets/templates/v1/attribution_instruction.txt")),
            (TemplateId::Planning, include_str!("../../assets/templates/v1/planning.txt")),
            (TemplateId::Integration, include_str!("../../assets/templates/v1/integration.txt")),
            (TemplateId::Extraction, include_str!("../../assets/templates/v1/extraction.txt")),
            (TemplateId::React, include_str!("../../assets/templates/v1/react.txt")),
        ];
        let templates = sources
            .into_iter()
            .map(|(id, body)| (id, PromptTemplate::parse(id, body).expect("bundled template parses")))
            .collect();
        Self { version: TEMPLATE_VERSION.to_string(), templates }
    }

    /// Loads `<dir>/<template_id>.txt` for every template id.
    pub fn load_dir(dir: &Path, version: impl Into<String>) -> Result<Self, GatewayError> {
        let mut templates = BTreeMap::new();
        for id in TemplateId::ALL {
            let body = std::fs::read_to_string(dir.join(format!("{id}.txt")))?;
            templates.insert(id, PromptTemplate::parse(id, body)?);
        }
        Ok(Self { version: version.into(), templates })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_substitution() {
        let t = PromptTemplate::parse(TemplateId::Planning, "Solve {query}").unwrap();
        assert_eq!(t.render(&[("query", "X")]).unwrap(), "Solve X");
    }

    #[test]
    fn missing_binding_names_placeholder() {
        let t = PromptTemplate::parse(TemplateId::Planning, "{query} with {tools}").unwrap();
        match t.render(&[("query", "q")]) {
            Err(GatewayError::MissingBinding { name, .. }) => assert_eq!(name, "tools"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn undeclared_placeholder_rejected() {
        assert!(matches!(
            PromptTemplate::parse(TemplateId::Planning, "hello {user}"),
            Err(GatewayError::UnknownPlaceholder { .. })
        ));
    }

    #[test]
    fn literal_braces_pass_through() {
        let t = PromptTemplate::parse(TemplateId::Planning, "dict {1: 2} {} {query}").unwrap();
        assert_eq!(t.render(&[("query", "q")]).unwrap(), "dict {1: 2} {} q");
    }

    #[test]
    fn bundled_templates_parse() {
        let set = TemplateSet::bundled();
        assert_eq!(set.version(), "v1");
        for id in TemplateId::ALL {
            assert!(set.get(id).placeholders().contains(&"query"), "{id} lacks {{query}}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn render_leaves_no_slots(values in proptest::collection::vec(".{0,20}", 6), inject in any::<bool>()) {
            let set = TemplateSet::bundled();
            let mut owned: Vec<(String, String)> = PLACEHOLDERS
                .iter()
                .zip(values)
                .map(|(k, v)| (k.to_string(), v))
                .collect();
            if inject {
                owned[0].1.push_str("{tools}{query}");
            }
            let bindings: Vec<(&str, &str)> = owned.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
            for id in TemplateId::ALL {
                let out = set.get(id).render(&bindings).unwrap();
                for name in PLACEHOLDERS {
                    let slot = format!("{{{}}}", name);
                    prop_assert!(!out.contains(&slot));
                }
            }
        }
    }
}
