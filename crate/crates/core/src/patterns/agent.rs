//! Tool-using agent loops built from interpreter blocks.
//!
//! Both architectures share one loop: think, act, observe, repeated until
//! the finish tool runs or the step budget is spent.
//!
//! * [`Architecture::React`] asks for a thought and an action in a single
//!   model call and parses the action strictly.
//! * [`Architecture::Split`] first asks for a free-text thought, then makes
//!   a second, schema-constrained call for the action and repairs it.
//!
//! A failed action parse adds a corrective user message and retries the
//! action-producing call once before the step is recorded as failed.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::ast::{Block, BlockKind, FunctionBlock, ModelBlock, ParserKind};
use crate::eval::{
    extract_signature, Context, Environment, EvalError, Interpreter, Scope, TraceEvent,
};
use crate::parser::is_identifier;
use crate::types::{decoding_params, Primitive, TypeExpr};
use crate::value::{canonical_json, stringify, Map, Message, Role, Value};

use super::repair::{
    extract_json, repair_action, strict_parse_action, ActionSpec, Extracted, FailureKind,
};

pub const FINISH_TOOL: &str = "finish";
pub const DEFAULT_MAX_STEPS: usize = 10;
pub const DEFAULT_MODEL: &str = "agent";
pub const OBSERVATION_PREFIX: &str = "Observation: ";
pub const THINK2_INSTRUCTION: &str =
    "Respond with the next action as a single JSON object and nothing else.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    React,
    Split,
}

impl Architecture {
    pub const ALL: [Architecture; 2] = [Architecture::React, Architecture::Split];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::React => "react",
            Architecture::Split => "split",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Architecture::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A tool the agent may call. The body is evaluated with the parameters
/// bound, like a function block.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolDef {
    pub name: String,
    pub description: String,
    pub params: IndexMap<String, TypeExpr>,
    pub body: Block,
}

impl ToolDef {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        params: impl IntoIterator<Item = (String, TypeExpr)>,
        body: Block,
    ) -> Self {
        ToolDef {
            name: name.into(),
            description: description.into(),
            params: params.into_iter().collect(),
            body,
        }
    }

    /// The built-in terminal tool; its result is the final answer.
    pub fn finish() -> Self {
        ToolDef::new(
            FINISH_TOOL,
            "Finish the task and report the final answer",
            [("answer".to_string(), TypeExpr::Primitive(Primitive::String))],
            Block::literal("${ answer }"),
        )
    }

    fn function(&self) -> FunctionBlock {
        FunctionBlock {
            params: self.params.clone(),
            body: Box::new(self.body.clone()),
        }
    }

    pub fn signature(&self) -> String {
        extract_signature(&self.function(), &self.name)
    }
}

/// Type of a well-formed action; drives constrained decoding.
pub fn action_spec_type() -> TypeExpr {
    TypeExpr::record([
        ("name", TypeExpr::Primitive(Primitive::String)),
        ("arguments", TypeExpr::Primitive(Primitive::Object)),
    ])
}

/// Tool listing plus the required output format.
pub fn build_tool_prompt(tools: &[ToolDef]) -> String {
    let mut out = String::from("You can use the following tools:\n");
    for t in tools {
        out.push_str(&format!("- {}: {}\n", t.signature(), t.description));
    }
    out.push_str(
        "Give each action as a JSON object of the form \
         {\"name\": \"<tool name>\", \"arguments\": {\"<parameter>\": <value>}}.",
    );
    out
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentConfigError {
    #[error("tool name `{0}` is not an identifier")]
    BadToolName(String),
    #[error("tool `{0}` is defined twice")]
    DuplicateTool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub goal: String,
    pub tools: Vec<ToolDef>,
    pub max_steps: usize,
    pub architecture: Architecture,
    pub model: String,
}

impl AgentConfig {
    /// Adds the finish tool unless one is already registered.
    pub fn new(
        goal: impl Into<String>,
        mut tools: Vec<ToolDef>,
        architecture: Architecture,
    ) -> Self {
        if !tools.iter().any(|t| t.name == FINISH_TOOL) {
            tools.push(ToolDef::finish());
        }
        AgentConfig {
            goal: goal.into(),
            tools,
            max_steps: DEFAULT_MAX_STEPS,
            architecture,
            model: DEFAULT_MODEL.into(),
        }
    }

    pub fn with_max_steps(mut self, n: usize) -> Self {
        self.max_steps = n;
        self
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn with_architecture(mut self, arch: Architecture) -> Self {
        self.architecture = arch;
        self
    }

    pub fn tool_names(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn validate(&self) -> Result<(), AgentConfigError> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.tools {
            if !is_identifier(&t.name) {
                return Err(AgentConfigError::BadToolName(t.name.clone()));
            }
            if !seen.insert(t.name.as_str()) {
                return Err(AgentConfigError::DuplicateTool(t.name.clone()));
            }
        }
        Ok(())
    }

    fn system_prompt(&self) -> String {
        let tail = match self.architecture {
            Architecture::React => {
                "At each step write `Thought:` and your reasoning, then the action JSON on its own line."
            }
            Architecture::Split => "At each step, first think in plain language about what to do next.",
        };
        format!("{}\n{tail}", build_tool_prompt(&self.tools))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentStep {
    pub thought: Option<String>,
    pub action: Option<ActionSpec>,
    pub observation: Option<String>,
    pub failure: Option<FailureKind>,
    /// Action-producing model calls made in this step (1 or 2).
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentResult {
    pub success: bool,
    pub final_answer: Option<String>,
    pub steps: Vec<AgentStep>,
}

impl AgentResult {
    /// Tools that ran successfully, in order, excluding finish.
    pub fn executed_tools(&self) -> Vec<&str> {
        self.steps
            .iter()
            .filter(|s| s.failure.is_none())
            .filter_map(|s| s.action.as_ref())
            .map(|a| a.tool_name.as_str())
            .filter(|n| *n != FINISH_TOOL)
            .collect()
    }
}

#[derive(Debug)]
pub struct AgentRun {
    pub result: AgentResult,
    pub context: Vec<Message>,
    pub trace: Vec<TraceEvent>,
    /// Set when the loop stopped early because a model call failed.
    pub error: Option<EvalError>,
}

pub fn run_react(cfg: &AgentConfig, env: Environment) -> AgentRun {
    run_agent(&cfg.clone().with_architecture(Architecture::React), env)
}

pub fn run_split(cfg: &AgentConfig, env: Environment) -> AgentRun {
    run_agent(&cfg.clone().with_architecture(Architecture::Split), env)
}

/// Runs the loop for `cfg.architecture`.
pub fn run_agent(cfg: &AgentConfig, env: Environment) -> AgentRun {
    let mut interp = Interpreter::new(env);
    let ctx = interp.new_context();
    let mut agent = Agent {
        cfg,
        names: cfg.tool_names().into_iter().map(String::from).collect(),
        interp,
        scope: Scope::new(),
        ctx,
        transcript: Vec::new(),
        steps: Vec::new(),
        final_answer: None,
    };
    let error = agent.run().err();
    let Agent {
        mut interp,
        ctx,
        steps,
        final_answer,
        ..
    } = agent;
    AgentRun {
        result: AgentResult {
            success: final_answer.is_some(),
            final_answer,
            steps,
        },
        context: ctx.into_messages(),
        trace: interp.take_trace(),
        error,
    }
}

struct Agent<'a> {
    cfg: &'a AgentConfig,
    names: Vec<String>,
    interp: Interpreter,
    scope: Scope,
    ctx: Context,
    transcript: Vec<String>,
    steps: Vec<AgentStep>,
    final_answer: Option<String>,
}

fn say(role: Role, text: impl Into<String>) -> Block {
    Block::message(role, Block::raw_data(Value::String(text.into())))
}

/// Makes model-supplied strings inert under template expansion.
fn escape_markers(v: &Value) -> Value {
    match v {
        Value::String(s) => Value::String(s.replace("${", "$${")),
        Value::Array(items) => Value::Array(items.iter().map(escape_markers).collect()),
        Value::Object(m) => Value::Object(
            m.iter()
                .map(|(k, x)| (k.clone(), escape_markers(x)))
                .collect(),
        ),
        other => other.clone(),
    }
}

/// Text before the action JSON, without a leading `Thought:` label.
fn thought_of(raw: &str) -> String {
    let before = match extract_json(raw) {
        Extracted::Json { start, .. } => &raw[..start],
        _ => raw,
    };
    let t = before.trim();
    t.strip_prefix("Thought:").unwrap_or(t).trim().to_string()
}

impl Agent<'_> {
    fn run(&mut self) -> Result<(), EvalError> {
        for tool in &self.cfg.tools {
            let def = Block::new(BlockKind::Function(tool.function())).with_def(tool.name.clone());
            let mut scratch = self.interp.new_context();
            self.interp
                .eval_block(&def, &mut self.scope, &mut scratch, Role::User)?;
        }
        self.append(say(Role::System, self.cfg.system_prompt()))?;
        self.append(say(Role::User, self.cfg.goal.clone()))?;
        for _ in 0..self.cfg.max_steps {
            let step = match self.cfg.architecture {
                Architecture::React => self.react_step()?,
                Architecture::Split => self.split_step()?,
            };
            self.steps.push(step);
            if self.final_answer.is_some() {
                break;
            }
        }
        Ok(())
    }

    fn append(&mut self, b: Block) -> Result<Value, EvalError> {
        self.interp
            .eval_block(&b, &mut self.scope, &mut self.ctx, Role::User)
    }

    fn step_index(&self) -> usize {
        self.steps.len()
    }

    fn ask(&mut self, model: Block) -> Result<String, EvalError> {
        let idx = self.step_index();
        let v = self
            .interp
            .eval_child(idx, &model, &mut self.scope, &mut self.ctx, Role::User)?;
        Ok(stringify(&v))
    }

    fn correct(&mut self, kind: FailureKind, wants: &str) -> Result<(), EvalError> {
        let note = format!(
            "Your last response was not a valid action ({}). Reply with {wants}.",
            kind.as_str()
        );
        self.transcript.push(note.clone());
        self.append(say(Role::User, note)).map(drop)
    }

    fn react_step(&mut self) -> Result<AgentStep, EvalError> {
        let mut step = AgentStep {
            thought: None,
            action: None,
            observation: None,
            failure: None,
            attempts: 0,
        };
        for attempt in 0..2 {
            if attempt > 0 {
                self.correct(
                    step.failure.expect("failed attempt"),
                    "a Thought line followed by one JSON action",
                )?;
            }
            step.attempts += 1;
            let raw = self.ask(Block::model(self.cfg.model.clone()))?;
            step.thought = Some(thought_of(&raw));
            match strict_parse_action(&raw, &self.names) {
                Ok(action) => {
                    step.failure = None;
                    step.action = Some(action);
                    break;
                }
                Err(kind) => step.failure = Some(kind),
            }
        }
        if let Some(thought) = &step.thought {
            self.transcript.push(format!("Thought: {thought}"));
        }
        self.act(&mut step)?;
        Ok(step)
    }

    fn think2_block(&self) -> Block {
        let mut input = vec![
            say(Role::System, build_tool_prompt(&self.cfg.tools)),
            say(Role::User, self.cfg.goal.clone()),
        ];
        if !self.transcript.is_empty() {
            input.push(say(Role::User, self.transcript.join("\n")));
        }
        input.push(say(Role::User, THINK2_INSTRUCTION));
        Block::new(BlockKind::Model(ModelBlock {
            model: self.cfg.model.clone(),
            parameters: Some(decoding_params(&action_spec_type())),
            input: Some(Box::new(Block::text(input))),
            parser: ParserKind::None,
        }))
    }

    fn split_step(&mut self) -> Result<AgentStep, EvalError> {
        let raw = self.ask(Block::model(self.cfg.model.clone()))?;
        let thought = thought_of(&raw);
        self.transcript.push(format!("Thought: {thought}"));
        let mut step = AgentStep {
            thought: Some(thought),
            action: None,
            observation: None,
            failure: None,
            attempts: 0,
        };
        for attempt in 0..2 {
            if attempt > 0 {
                self.correct(step.failure.expect("failed attempt"), "one JSON action")?;
            }
            step.attempts += 1;
            let raw = self.ask(self.think2_block())?;
            match repair_action(&raw, &self.names) {
                Ok(action) => {
                    step.failure = None;
                    step.action = Some(action);
                    break;
                }
                Err(kind) => step.failure = Some(kind),
            }
        }
        self.act(&mut step)?;
        Ok(step)
    }

    /// Runs the parsed action, if any, and appends the observation.
    fn act(&mut self, step: &mut AgentStep) -> Result<(), EvalError> {
        let Some(action) = step.action.clone() else {
            return Ok(());
        };
        self.transcript
            .push(format!("Action: {}", canonical_json(&action.to_value())));
        let args: Map = action
            .arguments
            .iter()
            .map(|(k, v)| (k.clone(), escape_markers(v)))
            .collect();
        let call = Block::call(action.tool_name.clone(), args);
        let mut scratch = self.interp.new_context();
        let idx = self.step_index();
        match self
            .interp
            .eval_child(idx, &call, &mut self.scope, &mut scratch, Role::User)
        {
            Ok(v) if action.tool_name == FINISH_TOOL => {
                self.final_answer = Some(stringify(&v));
            }
            Ok(v) => {
                let obs = stringify(&v);
                self.transcript.push(format!("{OBSERVATION_PREFIX}{obs}"));
                self.append(say(Role::Tool, format!("{OBSERVATION_PREFIX}{obs}")))?;
                step.observation = Some(obs);
            }
            Err(e) => {
                let note = format!("Tool error: {}", e.kind);
                self.transcript.push(note.clone());
                self.append(say(Role::User, note))?;
                step.failure = Some(FailureKind::ToolError);
            }
        }
        Ok(())
    }
}
