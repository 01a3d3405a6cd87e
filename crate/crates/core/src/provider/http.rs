//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde_json::json;

use super::{
    FinishReason, ModelProvider, ModelRequest, ModelResponse, ProviderError, ProviderSpec, Usage,
};

#[derive(Debug)]
pub struct HttpProvider {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    constrained: bool,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpProvider {
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key: None,
            model: String::new(),
            constrained: false,
            agent,
        }
    }

    pub fn from_spec(spec: &ProviderSpec) -> Result<Self, ProviderError> {
        let base = spec
            .base_url
            .as_deref()
            .ok_or_else(|| ProviderError::Config("http provider requires baseUrl".into()))?;
        let mut p = HttpProvider::new(base, spec.timeout());
        if let Some(var) = &spec.api_key_env_var {
            p.api_key = Some(std::env::var(var).map_err(|_| {
                ProviderError::Config(format!("environment variable {var} is not set"))
            })?);
        }
        p.model = spec.model.clone();
        p.constrained = spec.supports_constrained_decoding;
        Ok(p)
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn with_constrained_decoding(mut self, on: bool) -> Self {
        self.constrained = on;
        self
    }

    /// The configured model, else the program's model id minus any
    /// `provider/` prefix.
    pub fn model_name(&self, requested: &str) -> String {
        if !self.model.is_empty() {
            return self.model.clone();
        }
        requested
            .split_once('/')
            .map_or(requested, |(_, rest)| rest)
            .to_string()
    }

    pub fn request_body(&self, req: &ModelRequest) -> serde_json::Value {
        let messages: Vec<_> = req
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let mut body = serde_json::Map::new();
        body.insert("model".into(), json!(self.model_name(&req.model)));
        body.insert("messages".into(), json!(messages));
        for (k, v) in &req.params {
            if k != "model" && k != "messages" {
                body.insert(k.clone(), v.to_json());
            }
        }
        serde_json::Value::Object(body)
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<ModelResponse, ProviderError> {
        let mut call = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => ProviderError::Timeout,
            other => ProviderError::Transport(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::Http { status, body: text });
        }
        parse_completion(&text)
    }
}

fn parse_completion(text: &str) -> Result<ModelResponse, ProviderError> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| ProviderError::BadResponse("no choices".into()))?;
    let content = choice
        .pointer("/message/content")
        .and_then(|c| c.as_str())
        .unwrap_or_default()
        .to_string();
    let finish_reason = match choice.get("finish_reason").and_then(|f| f.as_str()) {
        Some("length") => FinishReason::Length,
        Some("stop") | None => FinishReason::Stop,
        Some(_) => FinishReason::Stop,
    };
    let usage = v.get("usage").map(|u| {
        let n = |k: &str| u.get(k).and_then(|x| x.as_u64()).unwrap_or(0);
        Usage {
            prompt_tokens: n("prompt_tokens"),
            completion_tokens: n("completion_tokens"),
            total_tokens: n("total_tokens"),
        }
    });
    Ok(ModelResponse {
        text: content,
        finish_reason,
        usage,
    })
}

fn retryable(e: &ProviderError) -> bool {
    match e {
        ProviderError::Timeout => true,
        ProviderError::Http { status, .. } => *status >= 500,
        _ => false,
    }
}

impl ModelProvider for HttpProvider {
    fn complete(&mut self, req: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        let body = self.request_body(req);
        match self.attempt(&body) {
            Err(e) if retryable(&e) => {
                log::warn!("model call failed ({e}); retrying once");
                self.attempt(&body)
            }
            other => other,
        }
    }

    fn supports_constrained_decoding(&self) -> bool {
        self.constrained
    }
}
