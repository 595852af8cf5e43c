//! Uniform access to a generative model backend.
//!
//! A [`Gateway`] wraps one [`ModelBackend`] (live HTTP, replay, record or a
//! scripted test double), counts completions, and owns the prompt templates
//! every pipeline stage renders through.

mod http;
mod react;
mod replay;
mod template;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use react::{format_react, parse_react, ReactKind, ReactStep};
pub use replay::{RecordingBackend, ReplayBackend, ReplayRecord, ReplayStore};
pub use template::{PromptTemplate, TemplateId, TemplateSet, PLACEHOLDERS, TEMPLATE_VERSION};

use crate::text::sha256_hex;

/// Environment variable holding the bearer token for the live backend.
pub const MODEL_KEY_ENV: &str = "PROCALC_MODEL_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("model backend unreachable for request {key}: {reason}")]
    BackendUnreachable { key: String, reason: String },
    #[error("replay miss: no recorded response for request key {key}")]
    ReplayMiss { key: String },
    #[error("invalid model request: {0}")]
    InvalidRequest(String),
    #[error("template {template} is missing a binding for {{{name}}}")]
    MissingBinding { template: String, name: String },
    #[error("template {template} uses undeclared placeholder {{{name}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("malformed action line: {0:?}")]
    MalformedAction(String),
    #[error("replay store i/o: {0}")]
    Store(#[from] std::io::Error),
    #[error("replay store line {line}: {reason}")]
    StoreFormat { line: usize, reason: String },
}

impl GatewayError {
    /// Request key carried by backend failures, if any.
    pub fn request_key(&self) -> Option<&str> {
        match self {
            GatewayError::BackendUnreachable { key, .. } | GatewayError::ReplayMiss { key } => {
                Some(key)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub prompt_text: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop_sequences: Vec<String>,
}

impl ModelRequest {
    pub fn new(prompt_text: impl Into<String>, max_tokens: u32) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            max_tokens,
            temperature: 0.0,
            stop_sequences: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt_text.is_empty() {
            return Err(GatewayError::InvalidRequest("prompt_text is empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Content hash of the canonicalized request, used as the replay key.
    pub fn key(&self) -> String {
        // Field order is fixed by the struct, so serde_json output is canonical.
        let canonical = serde_json::to_vec(self).expect("request serializes");
        sha256_hex(&canonical)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub backend_id: String,
    pub cached: bool,
}

/// A source of completions. Implementations must be safe to share across
/// threads.
pub trait ModelBackend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError>;
}

/// Test double that answers from a closure. Handy for authoring fixtures and
/// for unit tests that need a specific model reply.
type Responder = Box<dyn Fn(&ModelRequest) -> Option<String> + Send + Sync>;

pub struct ScriptedBackend {
    id: String,
    responder: Responder,
}

impl ScriptedBackend {
    pub fn new(
        id: impl Into<String>,
        responder: impl Fn(&ModelRequest) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        Self { id: id.into(), responder: Box::new(responder) }
    }

    /// Replies with each string in turn; further calls miss.
    pub fn sequence(replies: Vec<String>) -> Self {
        let queue = Mutex::new(std::collections::VecDeque::from(replies));
        Self::new("scripted", move |_| queue.lock().expect("queue lock").pop_front())
    }
}

impl ModelBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        match (self.responder)(request) {
            Some(text) => Ok(ModelResponse { text, backend_id: self.id.clone(), cached: false }),
            None => Err(GatewayError::ReplayMiss { key: request.key() }),
        }
    }
}

/// The single entry point pipeline stages use to talk to the model.
pub struct Gateway {
    backend: Box<dyn ModelBackend>,
    templates: TemplateSet,
    calls: AtomicUsize,
}

impl Gateway {
    pub fn new(backend: impl ModelBackend + 'static) -> Self {
        Self::with_templates(backend, TemplateSet::bundled())
    }

    pub fn with_templates(backend: impl ModelBackend + 'static, templates: TemplateSet) -> Self {
        Self { backend: Box::new(backend), templates, calls: AtomicUsize::new(0) }
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    /// Number of completions issued through this gateway so far.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = request.key();
        tracing::debug!(backend = self.backend.id(), %key, "model completion");
        self.backend.complete(request)
    }

    /// Renders `template` with `bindings` and completes the result.
    pub fn complete_template(
        &self,
        template: TemplateId,
        bindings: &[(&str, &str)],
        max_tokens: u32,
    ) -> Result<ModelResponse, GatewayError> {
        let prompt = self.templates.get(template).render(bindings)?;
        self.complete(&ModelRequest::new(prompt, max_tokens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        assert!(ModelRequest::new("", 10).validate().is_err());
        assert!(ModelRequest::new("x", 0).validate().is_err());
        let mut r = ModelRequest::new("x", 1);
        r.temperature = 1.5;
        assert!(r.validate().is_err());
        r.temperature = 0.0;
        assert!(r.validate().is_ok());
    }

    #[test]
    fn key_depends_on_every_field() {
        let base = ModelRequest::new("prompt", 16);
        let mut other = base.clone();
        other.stop_sequences.push("\n".into());
        assert_ne!(base.key(), other.key());
        let mut other = base.clone();
        other.max_tokens = 17;
        assert_ne!(base.key(), other.key());
        assert_eq!(base.key(), base.clone().key());
        assert_eq!(base.key().len(), 64);
    }

    #[test]
    fn gateway_counts_calls() {
        let gw = Gateway::new(ScriptedBackend::new("echo", |r| Some(r.prompt_text.clone())));
        gw.complete(&ModelRequest::new("a", 4)).unwrap();
        gw.complete(&ModelRequest::new("b", 4)).unwrap();
        assert_eq!(gw.call_count(), 2);
    }
}
