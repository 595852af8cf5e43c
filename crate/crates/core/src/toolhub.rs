//! Registry of documented tool protocols and ranked tool selection.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rag::{cosine, EmbeddingBackend};
use crate::text::content_tokens;

#[derive(Debug, Error)]
pub enum ToolhubError {
    #[error("tool {0:?} is already registered")]
    DuplicateId(String),
    #[error("tool registry is empty")]
    EmptyRegistry,
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("invalid protocol {tool_id:?}: {reason}")]
    InvalidProtocol { tool_id: String, reason: String },
    #[error("k must be >= 1")]
    ZeroK,
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("embedding re-scoring failed: {0}")]
    Embedding(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticType {
    Real,
    Integer,
    String,
    Array,
    Function,
    Boolean,
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SemanticType::Real => "real",
            SemanticType::Integer => "integer",
            SemanticType::String => "string",
            SemanticType::Array => "array",
            SemanticType::Function => "function",
            SemanticType::Boolean => "boolean",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub semantic_type: SemanticType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    pub required: bool,
    pub description: String,
}

/// Documentation of one tool. An explicit empty `args` list marks a zero-arg tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolProtocol {
    pub tool_id: String,
    pub name: String,
    pub overview: String,
    pub args: Vec<ArgSpec>,
    pub response_schema: String,
    pub docs: String,
    pub import_markers: Vec<String>,
}

impl ToolProtocol {
    pub fn validate(&self) -> Result<(), ToolhubError> {
        let invalid = |reason: &str| ToolhubError::InvalidProtocol {
            tool_id: self.tool_id.clone(),
            reason: reason.to_string(),
        };
        if self.tool_id.trim().is_empty() {
            return Err(invalid("tool_id is empty"));
        }
        if self.response_schema.trim().is_empty() {
            return Err(invalid("response_schema is empty"));
        }
        if self.import_markers.iter().all(|m| m.trim().is_empty()) {
            return Err(invalid("import_markers is empty"));
        }
        let mut seen = HashSet::new();
        for arg in &self.args {
            if !seen.insert(arg.name.as_str()) {
                return Err(invalid(&format!("duplicate argument {:?}", arg.name)));
            }
        }
        Ok(())
    }

    pub fn arg(&self, name: &str) -> Option<&ArgSpec> {
        self.args.iter().find(|a| a.name == name)
    }

    /// Text the selection scorer matches against.
    fn search_text(&self) -> String {
        format!("{} {} {}", self.name, self.overview, self.docs)
    }

    /// Argument table, one line per argument.
    pub fn args_table(&self) -> String {
        if self.args.is_empty() {
            return "Arguments: none".to_string();
        }
        let mut out = String::from("Arguments:");
        for a in &self.args {
            let unit = a.unit.as_deref().map(|u| format!(" [{u}]")).unwrap_or_default();
            let req = if a.required { "required" } else { "optional" };
            out.push_str(&format!("\n- {}: {}{} ({}) - {}", a.name, a.semantic_type, unit, req, a.description));
        }
        out
    }

    /// Does `text` mention one of this tool's import markers?
    pub fn marks(&self, text: &str) -> bool {
        self.import_markers.iter().any(|m| !m.is_empty() && text.contains(m.as_str()))
    }
}

/// A tool picked for a sub-task, with its selection score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRef {
    pub tool_id: String,
    pub score: f64,
}

/// Tool protocols keyed by id. Populated once at startup, then shared read-only.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    tools: BTreeMap<String, ToolProtocol>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The protocols shipped with the crate.
    pub fn bundled() -> Self {
        let sources = [
            ("ode_ivp_solver.toml", include_str!("../assets/tools/ode_ivp_solver.toml")),
            ("array_math.toml", include_str!("../assets/tools/array_math.toml")),
            ("plotter.toml", include_str!("../assets/tools/plotter.toml")),
            ("web_knowledge.toml", include_str!("../assets/tools/web_knowledge.toml")),
        ];
        let mut reg = Registry::new();
        for (name, src) in sources {
            let p = parse_protocol(Path::new(name), src).expect("bundled protocol parses");
            reg.register(p).expect("bundled protocols are unique");
        }
        reg
    }

    /// Loads every `*.toml` file in `dir` (sorted by file name).
    pub fn load_dir(dir: &Path) -> Result<Self, ToolhubError> {
        let io = |source| ToolhubError::Io { path: dir.to_path_buf(), source };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        let mut reg = Registry::new();
        for path in paths {
            let src = std::fs::read_to_string(&path)
                .map_err(|source| ToolhubError::Io { path: path.clone(), source })?;
            reg.register(parse_protocol(&path, &src)?)?;
        }
        Ok(reg)
    }

    pub fn register(&mut self, protocol: ToolProtocol) -> Result<(), ToolhubError> {
        protocol.validate()?;
        if self.tools.contains_key(&protocol.tool_id) {
            return Err(ToolhubError::DuplicateId(protocol.tool_id));
        }
        self.tools.insert(protocol.tool_id.clone(), protocol);
        Ok(())
    }

    pub fn get(&self, tool_id: &str) -> Option<&ToolProtocol> {
        self.tools.get(tool_id)
    }

    pub fn require(&self, tool_id: &str) -> Result<&ToolProtocol, ToolhubError> {
        self.get(tool_id).ok_or_else(|| ToolhubError::UnknownTool(tool_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// Protocols in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &ToolProtocol> {
        self.tools.values()
    }

    /// `name (tool_id): overview`, one per tool.
    pub fn overviews(&self) -> Vec<String> {
        self.iter().map(|t| format!("{} ({}): {}", t.name, t.tool_id, t.overview)).collect()
    }

    /// Ranks every tool by lexical overlap with `description` and keeps the top `k`.
    ///
    /// The score is the fraction of the description's content tokens that occur
    /// in the tool's name, overview or docs. Ties go to the smaller tool id.
    pub fn select(&self, description: &str, k: usize) -> Result<Vec<ToolRef>, ToolhubError> {
        self.select_with(description, k, None)
    }

    /// As [`Registry::select`], optionally blending in embedding similarity:
    /// `score = (lexical + max(cosine, 0)) / 2`.
    pub fn select_with(
        &self,
        description: &str,
        k: usize,
        rescorer: Option<&dyn EmbeddingBackend>,
    ) -> Result<Vec<ToolRef>, ToolhubError> {
        if self.is_empty() {
            return Err(ToolhubError::EmptyRegistry);
        }
        if k == 0 {
            return Err(ToolhubError::ZeroK);
        }
        let query: BTreeSet<String> = content_tokens(description).into_iter().collect();
        let mut ranked: Vec<ToolRef> = self
            .iter()
            .map(|t| ToolRef { tool_id: t.tool_id.clone(), score: lexical_score(&query, &t.search_text()) })
            .collect();
        if let Some(backend) = rescorer {
            let mut texts: Vec<String> = vec![description.to_string()];
            texts.extend(self.iter().map(ToolProtocol::search_text));
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let vecs = backend.embed(&refs).map_err(|e| ToolhubError::Embedding(e.to_string()))?;
            for (r, v) in ranked.iter_mut().zip(&vecs[1..]) {
                let sim = f64::from(cosine(&vecs[0], v)).clamp(0.0, 1.0);
                r.score = (r.score + sim) / 2.0;
            }
        }
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tool_id.cmp(&b.tool_id)));
        ranked.truncate(k);
        Ok(ranked)
    }

    /// Prompt-ready description of the given tools, in input order.
    pub fn protocol_digest(&self, tool_ids: &[String]) -> Result<String, ToolhubError> {
        let mut blocks = Vec::with_capacity(tool_ids.len());
        for id in tool_ids {
            let t = self.require(id)?;
            blocks.push(format!(
                "## {} ({})\nOverview: {}\n{}\nReturns: {}",
                t.name,
                t.tool_id,
                t.overview,
                t.args_table(),
                t.response_schema
            ));
        }
        Ok(blocks.join("\n\n"))
    }
}

fn lexical_score(query: &BTreeSet<String>, text: &str) -> f64 {
    if query.is_empty() {
        return 0.0;
    }
    let doc: HashSet<String> = content_tokens(text).into_iter().collect();
    let hits = query.iter().filter(|t| doc.contains(*t)).count();
    hits as f64 / query.len() as f64
}

/// Parses one protocol document (TOML).
pub fn parse_protocol(path: &Path, src: &str) -> Result<ToolProtocol, ToolhubError> {
    let mut p: ToolProtocol = toml::from_str(src)
        .map_err(|e| ToolhubError::Parse { path: path.to_path_buf(), reason: e.to_string() })?;
    p.docs = p.docs.trim().to_string();
    p.validate()?;
    Ok(p)
}
