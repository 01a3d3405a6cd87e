//! Scripted agent scenarios under fault injection, outcome classification
//! and comparison reports.

mod report;
mod scenario;
mod suite;

pub use report::{
    flow_file, flow_svg, markdown_table, read_report, render_report, report_json, JSON_FILE,
    REFERENCE_NOTES, TABLE_FILE,
};
pub use scenario::{
    Expectation, Scenario, ScenarioError, ScriptAction, ScriptStep, ScriptedModel, ToolSpec,
};
pub use suite::{
    classify, run_scenario, run_seed, run_suite, Metrics, OutcomeClass, RunRecord, SeedSpec,
    StepSummary, SuiteConfig, SuiteError, SuiteReport, ToolOutcome,
};
