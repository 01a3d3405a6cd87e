//! Fixture-scripted model.

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::fault::{apply_fault, FaultConfig, FaultKind, FaultSampler};
use super::{ModelProvider, ModelRequest, ModelResponse, ProviderError};
use crate::value::Value;

/// One scripted response. `match` is a regex tested against the content of
/// the last message; `fault: false` exempts the response from injection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    pub response: String,
    #[serde(default = "yes")]
    pub fault: bool,
}

fn yes() -> bool {
    true
}

impl Fixture {
    pub fn new(response: impl Into<String>) -> Self {
        Fixture {
            pattern: None,
            response: response.into(),
            fault: true,
        }
    }

    pub fn matching(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Fixture {
            pattern: Some(pattern.into()),
            ..Fixture::new(response)
        }
    }
}

/// Serves each fixture at most once, in file order: a call takes the first
/// unused fixture whose pattern (if any) matches the last message.
#[derive(Debug)]
pub struct MockProvider {
    fixtures: Vec<(Fixture, Option<Regex>)>,
    used: Vec<bool>,
    first_unused: usize,
    sampler: Option<FaultSampler>,
    constrained: bool,
    calls: usize,
    faults: Vec<Option<FaultKind>>,
}

impl MockProvider {
    pub fn new(fixtures: Vec<Fixture>) -> Result<Self, ProviderError> {
        let compiled = fixtures
            .into_iter()
            .map(|f| {
                let re = f
                    .pattern
                    .as_deref()
                    .map(Regex::new)
                    .transpose()
                    .map_err(|e| ProviderError::Config(format!("bad fixture pattern: {e}")))?;
                Ok((f, re))
            })
            .collect::<Result<Vec<_>, ProviderError>>()?;
        Ok(MockProvider {
            used: vec![false; compiled.len()],
            fixtures: compiled,
            first_unused: 0,
            sampler: None,
            constrained: false,
            calls: 0,
            faults: Vec::new(),
        })
    }

    /// Plain responses, no patterns.
    pub fn from_responses<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        MockProvider::new(responses.into_iter().map(Fixture::new).collect())
            .expect("no patterns to compile")
    }

    /// Reads a YAML list of fixtures.
    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        MockProvider::new(parse_fixtures(&text)?)
    }

    pub fn with_faults(mut self, config: FaultConfig) -> Self {
        self.sampler = (!config.is_clean()).then(|| FaultSampler::new(config));
        self
    }

    pub fn with_constrained_decoding(mut self, on: bool) -> Self {
        self.constrained = on;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    /// Fault applied on each call so far, in call order.
    pub fn fault_log(&self) -> &[Option<FaultKind>] {
        &self.faults
    }
}

pub fn parse_fixtures(text: &str) -> Result<Vec<Fixture>, ProviderError> {
    let v = crate::yaml::load_value(text)
        .map_err(|e| ProviderError::Config(format!("fixtures: {e}")))?;
    let list = match v {
        Value::Null => Value::Array(Vec::new()),
        Value::Object(mut m) if m.contains_key("fixtures") => {
            m.swap_remove("fixtures").unwrap_or_default()
        }
        other => other,
    };
    serde_json::from_value(list.to_json())
        .map_err(|e| ProviderError::Config(format!("fixtures: {e}")))
}

impl ModelProvider for MockProvider {
    fn complete(&mut self, req: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        self.calls += 1;
        let last = req
            .messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let pick = (self.first_unused..self.fixtures.len()).find(|&i| {
            !self.used[i]
                && self.fixtures[i]
                    .1
                    .as_ref()
                    .is_none_or(|re| re.is_match(last))
        });
        let Some(i) = pick else {
            return Err(ProviderError::FixtureExhausted { calls: self.calls });
        };
        self.used[i] = true;
        while self.first_unused < self.used.len() && self.used[self.first_unused] {
            self.first_unused += 1;
        }
        let fixture = &self.fixtures[i].0;
        let fault = match &mut self.sampler {
            Some(s) if fixture.fault => s.sample(),
            _ => None,
        };
        self.faults.push(fault);
        let text = match fault {
            Some(kind) => apply_fault(&fixture.response, kind),
            None => fixture.response.clone(),
        };
        Ok(ModelResponse::stop(text))
    }

    fn supports_constrained_decoding(&self) -> bool {
        self.constrained
    }
}
