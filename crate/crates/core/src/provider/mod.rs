//! Model providers: an OpenAI-compatible HTTP client and a fixture-driven
//! mock with seeded fault injection.

mod fault;
mod http;
mod mock;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::value::{Map, Message};

pub use fault::{apply_fault, FaultConfig, FaultKind, FaultSampler, NO_TOOL_SENTENCE};
pub use http::HttpProvider;
pub use mock::{parse_fixtures, Fixture, MockProvider};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRequest {
    /// Model id as written in the program, possibly provider-prefixed.
    pub model: String,
    pub messages: Vec<Message>,
    pub params: Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    #[default]
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl ModelResponse {
    pub fn stop(text: impl Into<String>) -> Self {
        ModelResponse {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            usage: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("fixture exhausted after {calls} call(s)")]
    FixtureExhausted { calls: usize },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("provider configuration: {0}")]
    Config(String),
}

/// One chat-completion backend.
pub trait ModelProvider: Send {
    fn complete(&mut self, req: &ModelRequest) -> Result<ModelResponse, ProviderError>;

    /// Whether `response_format` schema parameters may be sent.
    fn supports_constrained_decoding(&self) -> bool {
        false
    }
}

impl<P: ModelProvider + ?Sized> ModelProvider for Box<P> {
    fn complete(&mut self, req: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        (**self).complete(req)
    }

    fn supports_constrained_decoding(&self) -> bool {
        (**self).supports_constrained_decoding()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProviderSpec {
    pub kind: ProviderKind,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub api_key_env_var: Option<String>,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub supports_constrained_decoding: bool,
    #[serde(default)]
    pub fixtures_path: Option<PathBuf>,
    #[serde(default)]
    pub faults: Option<FaultConfig>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

impl ProviderSpec {
    pub fn mock(fixtures_path: impl Into<PathBuf>) -> Self {
        ProviderSpec {
            kind: ProviderKind::Mock,
            base_url: None,
            api_key_env_var: None,
            model: String::new(),
            supports_constrained_decoding: false,
            fixtures_path: Some(fixtures_path.into()),
            faults: None,
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn http(base_url: impl Into<String>) -> Self {
        ProviderSpec {
            kind: ProviderKind::Http,
            base_url: Some(base_url.into()),
            ..ProviderSpec::mock("")
        }
        .without_fixtures()
    }

    fn without_fixtures(mut self) -> Self {
        self.fixtures_path = None;
        self
    }

    /// Parses the command-line form:
    /// `mock:PATH[,seed=N,pMalformedJson=P,...,constrained=true]` or
    /// `http:URL[,key=ENV,model=NAME,constrained=true,timeout=SECS]`.
    pub fn parse(s: &str) -> Result<Self, ProviderError> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| {
            ProviderError::Config(format!("expected `mock:` or `http:` in {s:?}"))
        })?;
        let mut parts = rest.split(',');
        let target = parts.next().unwrap_or_default().to_string();
        let mut spec = match kind {
            "mock" => ProviderSpec::mock(target),
            "http" => ProviderSpec::http(target),
            other => {
                return Err(ProviderError::Config(format!(
                    "unknown provider kind `{other}`"
                )))
            }
        };
        let mut faults = FaultConfig::default();
        let mut any_fault = false;
        for opt in parts.filter(|p| !p.is_empty()) {
            let (k, v) = opt
                .split_once('=')
                .ok_or_else(|| ProviderError::Config(format!("expected key=value, got {opt:?}")))?;
            let prob = || {
                v.parse::<f64>()
                    .map_err(|_| ProviderError::Config(format!("bad probability {v:?} for {k}")))
            };
            match k {
                "key" => spec.api_key_env_var = Some(v.to_string()),
                "model" => spec.model = v.to_string(),
                "constrained" => spec.supports_constrained_decoding = v == "true",
                "timeout" => {
                    spec.timeout_secs = v
                        .parse()
                        .map_err(|_| ProviderError::Config(format!("bad timeout {v:?}")))?
                }
                "seed" => {
                    faults.seed = v
                        .parse()
                        .map_err(|_| ProviderError::Config(format!("bad seed {v:?}")))?;
                    any_fault = true;
                }
                "pMalformedJson" => (faults.p_malformed_json, any_fault) = (prob()?, true),
                "pWrongKey" => (faults.p_wrong_key, any_fault) = (prob()?, true),
                "pHallucinatedTool" => (faults.p_hallucinated_tool, any_fault) = (prob()?, true),
                "pNoTool" => (faults.p_no_tool, any_fault) = (prob()?, true),
                other => return Err(ProviderError::Config(format!("unknown option `{other}`"))),
            }
        }
        if any_fault {
            spec.faults = Some(faults);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        match self.kind {
            ProviderKind::Http if self.base_url.as_deref().is_none_or(str::is_empty) => Err(
                ProviderError::Config("http provider requires baseUrl".into()),
            ),
            ProviderKind::Mock
                if self
                    .fixtures_path
                    .as_deref()
                    .is_none_or(|p| p.as_os_str().is_empty()) =>
            {
                Err(ProviderError::Config(
                    "mock provider requires fixturesPath".into(),
                ))
            }
            _ => self.faults.as_ref().map_or(Ok(()), FaultConfig::validate),
        }
    }

    /// Overrides the fault seed, if faults are configured.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let Some(f) = &mut self.faults {
            f.seed = seed;
        }
        self
    }

    pub fn build(&self) -> Result<Box<dyn ModelProvider>, ProviderError> {
        self.validate()?;
        match self.kind {
            ProviderKind::Http => Ok(Box::new(HttpProvider::from_spec(self)?)),
            ProviderKind::Mock => {
                let path = self.fixtures_path.as_ref().expect("validated");
                let mut mock = MockProvider::from_file(path)?;
                if let Some(f) = &self.faults {
                    mock = mock.with_faults(f.clone());
                }
                Ok(Box::new(mock.with_constrained_decoding(
                    self.supports_constrained_decoding,
                )))
            }
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}
