//! Agent patterns: action parsing and the think/act/observe loops.
//!
//! The same loops are also shipped as PDL programs; see [`REACT_PDL`] and
//! [`SPLIT_PDL`].

mod agent;
mod repair;

pub use agent::{
    action_spec_type, build_tool_prompt, run_agent, run_react, run_split, AgentConfig,
    AgentConfigError, AgentResult, AgentRun, AgentStep, Architecture, ToolDef, DEFAULT_MAX_STEPS,
    DEFAULT_MODEL, FINISH_TOOL, OBSERVATION_PREFIX, THINK2_INSTRUCTION,
};
pub use repair::{
    extract_json, match_tool, repair_action, strict_parse_action, ActionSpec, Extracted,
    FailureKind, ARGUMENT_KEYS, NAME_KEYS,
};

/// Combined think-and-act loop as a PDL library (defines `react`).
pub const REACT_PDL: &str = include_str!("../../patterns/react.pdl");
/// Two-call loop as a PDL library (defines `split`).
pub const SPLIT_PDL: &str = include_str!("../../patterns/split.pdl");
