//! Scenario files and the scripted model that plays them.

use std::path::Path;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::ast::Block;
use crate::patterns::{
    ActionSpec, AgentConfig, Architecture, ToolDef, FINISH_TOOL, OBSERVATION_PREFIX,
    THINK2_INSTRUCTION,
};
use crate::provider::{
    apply_fault, FaultConfig, FaultKind, FaultSampler, ModelProvider, ModelRequest, ModelResponse,
    ProviderError,
};
use crate::types::{parse_type_expr, TypeExpr};
use crate::value::{canonical_json, Map, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("scenario {id}: {message}")]
pub struct ScenarioError {
    pub id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub params: IndexMap<String, Value>,
    /// Template rendered with the arguments bound.
    pub result: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    pub thought: String,
    pub action: ScriptAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptAction {
    pub name: String,
    #[serde(default)]
    pub arguments: Map,
}

impl ScriptAction {
    pub fn to_spec(&self) -> ActionSpec {
        ActionSpec::new(self.name.clone(), self.arguments.clone())
    }
}

/// What a run must show to count as a task success.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expectation {
    /// Regex the final answer must match.
    pub answer: Option<String>,
    /// Tool names that must run in this order (other calls may interleave).
    pub calls: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub goal: String,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    pub tools: Vec<ToolSpec>,
    /// The model's script: one thought and action per successful step.
    pub script: Vec<ScriptStep>,
    #[serde(default)]
    pub expect: Expectation,
    #[serde(default)]
    pub faults: FaultConfig,
}

fn default_max_steps() -> usize {
    crate::patterns::DEFAULT_MAX_STEPS
}

impl Scenario {
    pub fn from_yaml(text: &str) -> Result<Self, ScenarioError> {
        let bad = |message: String| ScenarioError {
            id: "?".into(),
            message,
        };
        let v = crate::yaml::load_value(text).map_err(|e| bad(e.to_string()))?;
        let s: Scenario = serde_json::from_value(v.to_json()).map_err(|e| bad(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError {
            id: path.display().to_string(),
            message: e.to_string(),
        })?;
        Scenario::from_yaml(&text).map_err(|mut e| {
            if e.id == "?" {
                e.id = path.display().to_string();
            }
            e
        })
    }

    fn error(&self, message: impl Into<String>) -> ScenarioError {
        ScenarioError {
            id: self.id.clone(),
            message: message.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.script.is_empty() {
            return Err(self.error("script is empty"));
        }
        if self.script.last().map(|s| s.action.name.as_str()) != Some(FINISH_TOOL) {
            return Err(self.error(format!("script must end with a `{FINISH_TOOL}` action")));
        }
        for step in &self.script {
            let name = &step.action.name;
            if name != FINISH_TOOL && !self.tools.iter().any(|t| &t.name == name) {
                return Err(self.error(format!("script uses undeclared tool `{name}`")));
            }
        }
        for t in &self.tools {
            self.params(t)?;
        }
        if let Some(re) = &self.expect.answer {
            Regex::new(re).map_err(|e| self.error(format!("bad answer pattern: {e}")))?;
        }
        self.faults
            .validate()
            .map_err(|e| self.error(e.to_string()))?;
        self.config(Architecture::React)
            .validate()
            .map_err(|e| self.error(e.to_string()))
    }

    fn params(&self, t: &ToolSpec) -> Result<IndexMap<String, TypeExpr>, ScenarioError> {
        t.params
            .iter()
            .map(|(k, v)| {
                parse_type_expr(v)
                    .map(|ty| (k.clone(), ty))
                    .map_err(|e| self.error(format!("tool `{}` parameter `{k}`: {e}", t.name)))
            })
            .collect()
    }

    /// Number of non-finish actions in the script.
    pub fn tool_steps(&self) -> usize {
        self.script.len() - 1
    }

    pub fn config(&self, arch: Architecture) -> AgentConfig {
        let tools = self
            .tools
            .iter()
            .map(|t| {
                ToolDef::new(
                    t.name.clone(),
                    t.description.clone(),
                    self.params(t).unwrap_or_default(),
                    Block::data(Value::String(t.result.clone())),
                )
            })
            .collect();
        AgentConfig::new(self.goal.clone(), tools, arch).with_max_steps(self.max_steps)
    }
}

/// Mock model that follows a scenario script.
///
/// The script position is the number of observations already in the
/// request, so a failed step replays the same action. Faults are sampled
/// only for action-producing replies; a split agent's free-text thought
/// call never consumes the fault stream.
pub struct ScriptedModel {
    arch: Architecture,
    script: Vec<ScriptStep>,
    sampler: FaultSampler,
    calls: usize,
    faults: Vec<Option<FaultKind>>,
}

impl ScriptedModel {
    pub fn new(scenario: &Scenario, arch: Architecture, faults: FaultConfig) -> Self {
        ScriptedModel {
            arch,
            script: scenario.script.clone(),
            sampler: FaultSampler::new(faults),
            calls: 0,
            faults: Vec::new(),
        }
    }

    pub fn fault_log(&self) -> &[Option<FaultKind>] {
        &self.faults
    }

    fn position(req: &ModelRequest) -> usize {
        req.messages
            .iter()
            .flat_map(|m| m.content.lines())
            .filter(|l| l.starts_with(OBSERVATION_PREFIX))
            .count()
    }

    fn faulted(&mut self, text: String) -> String {
        let fault = self.sampler.sample();
        self.faults.push(fault);
        match fault {
            Some(kind) => apply_fault(&text, kind),
            None => text,
        }
    }
}

impl ModelProvider for ScriptedModel {
    fn complete(&mut self, req: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        self.calls += 1;
        let idx = Self::position(req).min(self.script.len() - 1);
        let step = &self.script[idx];
        let action = canonical_json(&step.action.to_spec().to_value());
        let think2 = req
            .messages
            .last()
            .is_some_and(|m| m.content == THINK2_INSTRUCTION);
        let text = match (self.arch, think2) {
            (Architecture::React, _) => {
                self.faulted(format!("Thought: {}\n{action}", step.thought))
            }
            (Architecture::Split, true) => self.faulted(action),
            (Architecture::Split, false) => step.thought.clone(),
        };
        Ok(ModelResponse::stop(text))
    }

    fn supports_constrained_decoding(&self) -> bool {
        true
    }
}
