//! Live backend speaking the chat-completions HTTP shape.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{GatewayError, ModelBackend, ModelRequest, ModelResponse};

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Debug, Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    id: String,
}

impl HttpBackend {
    /// `base_url` without the `/v1/chat/completions` suffix.
    pub fn new(base_url: &str, model: impl Into<String>, api_key: Option<String>) -> Self {
        let model = model.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .expect("http client builds");
        Self {
            endpoint: format!("{}/v1/chat/completions", base_url.trim_end_matches('/')),
            id: format!("http:{model}"),
            model,
            api_key,
            client,
        }
    }

    /// Reads the bearer token from `key_env` (usually `PROCALC_MODEL_KEY`).
    pub fn from_env(base_url: &str, model: impl Into<String>, key_env: &str) -> Self {
        Self::new(base_url, model, std::env::var(key_env).ok().filter(|k| !k.is_empty()))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl ModelBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let key = request.key();
        let unreachable = |reason: String| GatewayError::BackendUnreachable { key: key.clone(), reason };
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt_text}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if !request.stop_sequences.is_empty() {
            body["stop"] = json!(request.stop_sequences);
        }
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(token) = &self.api_key {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| unreachable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(unreachable(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| unreachable(format!("bad response body: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        Ok(ModelResponse { text, backend_id: self.id.clone(), cached: false })
    }
}
