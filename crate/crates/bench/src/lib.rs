//! Inputs shared by the interpreter benchmarks.

use pdl_core::harness::Scenario;
use pdl_core::{
    parse_program, parse_type_expr, CodeError, Environment, FixedClock, FnRunner, MockProvider,
    Program, TypeExpr, Value,
};

pub const TOOL_USE_PDL: &str = include_str!("../../../demo/tool_use.pdl");
pub const SCENARIO_YAML: &str = include_str!("../../../demo/scenarios/weather-trip.yaml");
pub const ACTIONS: &str =
    r#"[{"name": "search", "arguments": {"topic": "circumference of Earth"}}]"#;
pub const PARAGRAPH: &str =
    "Earth's circumference is the distance around Earth. Measured around the equator, it is \
                             40,075.017 km (24,901.461 mi).";

/// Model outputs the repair parser sees in practice.
pub const RAW_ACTIONS: [&str; 4] = [
    r#"{"name": "search", "arguments": {"topic": "Earth"}}"#,
    "Thought: look it up.\n```json\n{\"tool_name\": \"Search\", \"args\": {\"topic\": \"Earth\"}}\n```",
    r#"[{"action": "sea", "parameters": {"topic": "Earth"}}]"#,
    "I think I should search for that.",
];

pub fn tool_use_program() -> Program {
    parse_program(TOOL_USE_PDL, "tool_use.pdl".as_ref()).expect("demo program parses")
}

/// Mock model plus an in-process search stub.
pub fn tool_use_env() -> Environment {
    Environment::new(MockProvider::from_responses([ACTIONS]))
        .with_clock(FixedClock(0))
        .with_code_runner(FnRunner(|_: &str, _: &pdl_core::Map| {
            Ok::<_, CodeError>(Value::from(PARAGRAPH))
        }))
}

pub fn scenario() -> Scenario {
    Scenario::from_yaml(SCENARIO_YAML).expect("demo scenario parses")
}

pub fn action_list_type() -> TypeExpr {
    let shorthand =
        Value::from_json_str(r#"{"list": {"object": {"name": "string", "arguments": "object"}}}"#)
            .expect("valid json");
    parse_type_expr(&shorthand).expect("valid shorthand")
}

/// An action list with `n` entries.
pub fn action_list(n: usize) -> Value {
    let one =
        Value::from_json_str(r#"{"name": "search", "arguments": {"topic": "Earth", "limit": 3}}"#)
            .expect("valid json");
    Value::Array(vec![one; n])
}
