//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use pdl_core::code::CodeError;
use pdl_core::harness::{report_json, run_suite, SuiteConfig, ToolOutcome};
use pdl_core::patterns::{
    repair_action, strict_parse_action, ActionSpec, Architecture, FailureKind,
};
use pdl_core::provider::{FaultKind, NO_TOOL_SENTENCE};
use pdl_core::{
    apply_fault, canonical_json, check_value, parse_program, run_program, BlockKind, Environment,
    FaultConfig, FixedClock, FnRunner, Map, Message, MockProvider, ModelProvider, ModelRequest,
    NoRunner, Role, Scope, TypeExpr, Value,
};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;

const PARAGRAPH: &str = "Earth's circumference is the distance around Earth. Measured around the equator, it is \
40,075.017 km (24,901.461 mi). Measured passing through the poles, the circumference is 40,007.863 km (24,859.734 mi).";
const ACTIONS: &str = r#"[{"name": "search", "arguments": {"topic": "circumference of Earth"}}]"#;

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

/// Draws `n` values from `s` with a fixed-seed runner.
fn sample<S: Strategy>(s: S, n: usize) -> Vec<S::Value> {
    let mut runner = TestRunner::deterministic();
    (0..n)
        .map(|_| {
            s.new_tree(&mut runner)
                .expect("strategy yields values")
                .current()
        })
        .collect()
}

fn golden_env(runner: impl pdl_core::CodeRunner + 'static) -> Environment {
    let mock =
        MockProvider::from_file(&demo_dir().join("tool_use.fixtures.yaml")).expect("fixtures load");
    Environment::new(mock)
        .with_code_runner(runner)
        .with_clock(FixedClock(0))
}

fn search_stub() -> impl pdl_core::CodeRunner {
    FnRunner(
        |_code: &str, scope: &Map| match scope.get("topic").and_then(Value::as_str) {
            Some("circumference of Earth") => Ok(Value::from(PARAGRAPH)),
            other => Err(CodeError::Exec {
                kind: "ValueError".into(),
                message: format!("unexpected topic {other:?}"),
                traceback: None,
            }),
        },
    )
}

fn golden_run() -> Outcome {
    let path = demo_dir().join("tool_use.pdl");
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let program = parse_program(&text, &path).map_err(|d| format!("{d:?}"))?;
    let run = run_program(&program, Scope::new(), golden_env(search_stub()));
    let elapsed = start.elapsed();
    if !run.is_ok() {
        return Err(format!("evaluation errors: {:?}", run.errors));
    }
    let tools_prompt = "Here are the tools you can use:\n\
        - search(topic: string): Search Wikipedia for a topic\n\
        Reply with a JSON list of actions of the form [{\"name\": <tool name>, \"arguments\": {<parameter>: <value>}}].";
    let expected = [
        Message::new(
            Role::System,
            "You are a helpful assistant that can call tools.",
        ),
        Message::new(Role::User, tools_prompt),
        Message::new(Role::User, "What is the circumference of Earth?"),
        Message::new(Role::Assistant, ACTIONS),
        Message::new(Role::User, PARAGRAPH),
    ];
    let got: Vec<(Role, &str)> = run
        .final_context
        .iter()
        .map(|m| (m.role, m.content.as_str()))
        .collect();
    let want: Vec<(Role, &str)> = expected
        .iter()
        .map(|m| (m.role, m.content.as_str()))
        .collect();
    if got != want {
        return Err(format!("context mismatch:\n got {got:#?}\nwant {want:#?}"));
    }
    if elapsed >= Duration::from_secs(1) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!(
        "[system, user, user, assistant, user] byte-exact in {elapsed:?}"
    ))
}

fn action_list_spec() -> Result<TypeExpr, String> {
    let path = demo_dir().join("tool_use.pdl");
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let program = parse_program(&text, &path).map_err(|d| format!("{d:?}"))?;
    let BlockKind::Text(parts) = &program.root.kind else {
        return Err("root is not a text block".into());
    };
    parts
        .iter()
        .find(|b| b.def.as_deref() == Some("actions"))
        .and_then(|b| b.spec.clone())
        .ok_or_else(|| "no `actions` spec".into())
}

fn typing_suite() -> Outcome {
    const N: usize = 2000;
    let pairs = sample(arb_typed_pair(), N);
    let mut accepted = 0;
    let mut disagreements = Vec::new();
    for (v, t) in &pairs {
        let ours = check_value(v, t).ok;
        accepted += usize::from(ours);
        if ours != schema_oracle(v, t) {
            disagreements.push(format!("{v} : {t}"));
        }
    }
    if !disagreements.is_empty() {
        return Err(format!(
            "{} disagreement(s), first: {}",
            disagreements.len(),
            disagreements[0]
        ));
    }
    let spec = action_list_spec()?;
    let clean = Value::from_json_str(ACTIONS).expect("valid JSON");
    let wrong =
        Value::from_json_str(&ACTIONS.replace("\"name\"", "\"tool_name\"")).expect("valid JSON");
    if !check_value(&clean, &spec).ok {
        return Err("action-list spec rejects the clean list".into());
    }
    if check_value(&wrong, &spec).ok {
        return Err("action-list spec accepts the `tool_name` variant".into());
    }
    Ok(format!(
        "{N} pairs ({accepted} conforming), 0 disagreements; action-list spec accepts clean, rejects tool_name"
    ))
}

fn context_laws() -> Outcome {
    const N: usize = 1000;
    let mut violations = 0;
    let mut first = None;
    let mut max_depth = 0;
    let mut appends = 0;
    for root in sample(arb_pure_block(), N) {
        max_depth = max_depth.max(block_depth(&root));
        let program = pure_program(root);
        let env = Environment::new(MockProvider::from_responses(Vec::<String>::new()))
            .with_clock(FixedClock(0));
        let run = run_program(&program, Scope::new(), env);
        appends += run.final_context.len();
        let mut bad = context_law_violations(&program, &run);
        if !run.is_ok() {
            bad.push(format!("evaluation errors: {:?}", run.errors));
        }
        if !bad.is_empty() {
            violations += 1;
            first.get_or_insert(bad);
        }
    }
    if max_depth > 4 {
        return Err(format!("generator produced depth {max_depth}"));
    }
    match first {
        Some(bad) => Err(format!("{violations} program(s) violate, first: {bad:?}")),
        None => Ok(format!(
            "{N} programs (max depth {max_depth}, {appends} appends), 0 violations"
        )),
    }
}

const TOOLS: &[&str] = &[
    "search",
    "get_weather",
    "calculator",
    "send_email",
    "finish",
];

fn arb_action() -> impl Strategy<Value = ActionSpec> {
    (proptest::sample::select(TOOLS), arb_map()).prop_map(|(t, args)| ActionSpec::new(t, args))
}

fn repair_parser() -> Outcome {
    const N: usize = 1000;
    let actions = sample(arb_action(), N);
    for a in &actions {
        let raw = canonical_json(&a.to_value());
        match (strict_parse_action(&raw, TOOLS), repair_action(&raw, TOOLS)) {
            (Ok(s), Ok(r)) if &s == a && &r == a => {}
            other => return Err(format!("valid action {raw} changed: {other:?}")),
        }
    }

    let abc = repair_action(r#"{"name": "abc"}"#, &["abc"]);
    if abc != Ok(ActionSpec::new("abc", Map::new())) {
        return Err(format!("{{\"name\": \"abc\"}} repaired to {abc:?}"));
    }
    if strict_parse_action(r#"{"name": "abc"}"#, &["abc"]).is_ok() {
        return Err("strict parsing accepts a missing `arguments` key".into());
    }

    let mut recovered = 0;
    let mut failures = std::collections::BTreeMap::<&str, usize>::new();
    let mut cases = 0;
    for a in &actions {
        let clean = canonical_json(&a.to_value());
        let framings = [
            clean.clone(),
            format!("Thought: I will use {}.\n{clean}", a.tool_name),
            format!("```json\n{clean}\n```"),
        ];
        for text in &framings {
            for fault in FaultKind::PRIORITY {
                cases += 1;
                let faulted = apply_fault(text, fault);
                match repair_action(&faulted, TOOLS) {
                    Ok(got) if &got == a => recovered += 1,
                    Ok(got) => {
                        return Err(format!("{fault:?} on {text:?} gave wrong action {got:?}"))
                    }
                    Err(
                        k @ (FailureKind::ParseError
                        | FailureKind::NoTool
                        | FailureKind::UnknownTool),
                    ) => {
                        *failures.entry(k.as_str()).or_default() += 1;
                    }
                    Err(k) => return Err(format!("{fault:?} on {text:?} gave failure {k:?}")),
                }
            }
        }
    }
    Ok(format!(
        "{N} valid actions unchanged; {{\"name\": \"abc\"}} -> abc; fuzz {cases} cases: {recovered} recovered exactly, \
         failures {failures:?}, 0 wrong actions"
    ))
}

/// P(X >= k) for X ~ Binomial(n, p).
fn mechanism() -> Outcome {
    let cfg = SuiteConfig::load(&demo_dir().join("suite.yaml")).map_err(|e| e.to_string())?;
    let scenarios = cfg.load_scenarios().map_err(|e| e.to_string())?;
    let seeds = cfg.seeds.seeds();
    let conditions = cfg.conditions();
    let Some(Some(faults)) = conditions.first() else {
        return Err("suite has no fault condition".into());
    };
    if faults.p_hallucinated_tool != 0.0 || faults.p_no_tool != 0.0 {
        return Err("oracle assumes only malformed-JSON and wrong-key faults".into());
    }
    let start = Instant::now();
    let report = run_suite(&scenarios, &Architecture::ALL, &seeds, Some(faults))
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let again = run_suite(&scenarios, &Architecture::ALL, &seeds, Some(faults))
        .map_err(|e| e.to_string())?;

    let shape: Vec<(usize, usize)> = scenarios
        .iter()
        .map(|s| (s.tool_steps(), s.max_steps))
        .collect();
    let exp_react = expected_failure(faults, Architecture::React, &shape);
    let exp_split = expected_failure(faults, Architecture::Split, &shape);
    let react = report.metrics[&Architecture::React].failure_rate();
    let split = report.metrics[&Architecture::Split].failure_rate();
    let n = report.metrics[&Architecture::React].n as f64;
    let se = ((exp_react * (1.0 - exp_react) + exp_split * (1.0 - exp_split)) / n).sqrt();
    let (gap, exp_gap) = (react - split, exp_react - exp_split);
    let detail = format!(
        "{} scenarios x {} seeds; failed-or-no-tool react {react:.3} split {split:.3}; gap {gap:.3} \
         (expected {exp_gap:.3} = {exp_react:.3} - {exp_split:.3}, se {se:.3}); {elapsed:.1?}",
        scenarios.len(),
        seeds.len()
    );
    if scenarios.len() != 10 || seeds.len() != 200 {
        return Err(format!("suite shape: {detail}"));
    }
    if gap < 0.15 {
        return Err(format!("gap below 0.15: {detail}"));
    }
    if (gap - exp_gap).abs() > 4.0 * se {
        return Err(format!(
            "gap inconsistent with the enumerated expectation: {detail}"
        ));
    }
    if report_json(&report) != report_json(&again) {
        return Err(format!("report differs between repeat runs: {detail}"));
    }
    if elapsed >= Duration::from_secs(60) {
        return Err(format!("too slow: {detail}"));
    }
    let outcomes: usize = ToolOutcome::ALL
        .iter()
        .filter(|o| report.metrics[&Architecture::React].fraction(**o) > 0.0)
        .count();
    Ok(format!(
        "{detail}; report byte-identical on repeat; {outcomes} outcome classes observed for react"
    ))
}

fn fault_convergence() -> Outcome {
    const N: usize = 10_000;
    let faults = FaultConfig {
        seed: 42,
        p_no_tool: 0.3,
        ..Default::default()
    };
    let mut mock =
        MockProvider::from_responses(std::iter::repeat_n(ACTIONS, N)).with_faults(faults);
    let req = ModelRequest {
        model: "mock".into(),
        messages: vec![Message::new(Role::User, "go")],
        params: Map::new(),
    };
    let mut no_tool = 0;
    for _ in 0..N {
        let text = mock.complete(&req).map_err(|e| e.to_string())?.text;
        no_tool += usize::from(text == NO_TOOL_SENTENCE);
    }
    let logged = mock
        .fault_log()
        .iter()
        .filter(|f| **f == Some(FaultKind::NoTool))
        .count();
    let rate = no_tool as f64 / N as f64;
    if logged != no_tool {
        return Err(format!(
            "fault log ({logged}) disagrees with responses ({no_tool})"
        ));
    }
    if (rate - 0.3).abs() > 0.02 {
        return Err(format!("empirical rate {rate:.4} outside 0.3 +/- 0.02"));
    }
    Ok(format!("{N} calls, empirical no-tool rate {rate:.4}"))
}

fn runs_without_sidecar() -> Outcome {
    let path = demo_dir().join("tool_use.pdl");
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let program = parse_program(&text, &path).map_err(|d| format!("{d:?}"))?;
    let without = run_program(&program, Scope::new(), golden_env(NoRunner));
    if without.is_ok() {
        return Err("code block succeeded with no runner at all".into());
    }
    let with = run_program(&program, Scope::new(), golden_env(search_stub()));
    if !with.is_ok() {
        return Err(format!("in-process stub failed: {:?}", with.errors));
    }
    if std::env::var_os(pdl_core::code::SIDECAR_ENV).is_some() {
        return Err(format!(
            "{} is set; checks must not depend on it",
            pdl_core::code::SIDECAR_ENV
        ));
    }
    Ok(
        "code blocks served by an in-process stub; no runner fails cleanly; no sidecar configured"
            .into(),
    )
}

fn main() {
    let checks: [Check; 7] = [
        ("golden tool-use run", golden_run),
        ("typing agrees with JSON Schema", typing_suite),
        ("context laws", context_laws),
        ("repair parser", repair_parser),
        ("architecture comparison under faults", mechanism),
        ("fault-rate convergence", fault_convergence),
        ("no code-runner sidecar required", runs_without_sidecar),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name}: {reason}");
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
