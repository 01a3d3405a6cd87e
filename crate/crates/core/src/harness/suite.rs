//! Classification, single runs and parallel suites.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::scenario::{Scenario, ScenarioError, ScriptedModel};
use crate::eval::{Environment, FixedClock};
use crate::patterns::{run_agent, AgentResult, Architecture, FailureKind};
use crate::provider::FaultConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolOutcome {
    ToolCalledOk,
    ToolCallFailed,
    NoToolCalled,
}

impl ToolOutcome {
    pub const ALL: [ToolOutcome; 3] = [
        ToolOutcome::ToolCalledOk,
        ToolOutcome::ToolCallFailed,
        ToolOutcome::NoToolCalled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ToolOutcome::ToolCalledOk => "tool_called_ok",
            ToolOutcome::ToolCallFailed => "tool_call_failed",
            ToolOutcome::NoToolCalled => "no_tool_called",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OutcomeClass {
    pub tool_outcome: ToolOutcome,
    pub task_success: bool,
}

/// `required` occurs in `executed` in order, possibly with gaps.
fn is_subsequence(required: &[String], executed: &[&str]) -> bool {
    let mut it = executed.iter();
    required.iter().all(|r| it.any(|e| e == r))
}

/// Maps a run to exactly one outcome.
///
/// In priority order: some tool ran and the required calls were all made;
/// otherwise a step failed on parse, unknown tool or tool error, or some
/// tool ran; otherwise nothing ran.
pub fn classify(result: &AgentResult, scenario: &Scenario) -> OutcomeClass {
    let executed: Vec<&str> = result
        .steps
        .iter()
        .filter(|s| s.failure.is_none())
        .filter_map(|s| s.action.as_ref())
        .map(|a| a.tool_name.as_str())
        .collect();
    let non_finish: Vec<&str> = result.executed_tools();
    let calls_ok = is_subsequence(&scenario.expect.calls, &non_finish);
    let hard_failure = result.steps.iter().any(|s| {
        matches!(
            s.failure,
            Some(FailureKind::ParseError | FailureKind::UnknownTool | FailureKind::ToolError)
        )
    });
    let tool_outcome = if !executed.is_empty() && calls_ok {
        ToolOutcome::ToolCalledOk
    } else if hard_failure || !executed.is_empty() {
        ToolOutcome::ToolCallFailed
    } else {
        ToolOutcome::NoToolCalled
    };
    let answer_ok = match (&scenario.expect.answer, &result.final_answer) {
        (None, _) => true,
        (Some(re), Some(ans)) => Regex::new(re).is_ok_and(|r| r.is_match(ans)),
        (Some(_), None) => false,
    };
    OutcomeClass {
        tool_outcome,
        task_success: result.success && answer_ok && calls_ok,
    }
}

/// Fault-stream seed for one (scenario, seed) pair; both architectures get
/// the same stream.
pub fn run_seed(scenario_id: &str, seed: u64) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let h = scenario_id.bytes().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    });
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Runs one scenario. `faults` overrides the scenario's own fault config.
pub fn run_scenario(
    scenario: &Scenario,
    arch: Architecture,
    seed: u64,
    faults: Option<&FaultConfig>,
) -> Result<(AgentResult, OutcomeClass), ScenarioError> {
    let mut cfg = faults.unwrap_or(&scenario.faults).clone();
    cfg.seed = run_seed(&scenario.id, seed);
    let model = ScriptedModel::new(scenario, arch, cfg);
    let env = Environment::new(model).with_clock(FixedClock(0));
    let run = run_agent(&scenario.config(arch), env);
    if let Some(e) = run.error {
        return Err(ScenarioError {
            id: scenario.id.clone(),
            message: e.to_string(),
        });
    }
    let class = classify(&run.result, scenario);
    Ok((run.result, class))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Metrics {
    pub n: usize,
    pub success_rate: f64,
    pub tool_outcome_histogram: BTreeMap<ToolOutcome, f64>,
    /// Keyed `"<scenario id>#<seed>"`.
    pub by_scenario: BTreeMap<String, OutcomeClass>,
}

impl Metrics {
    pub fn from_runs<'a>(runs: impl IntoIterator<Item = &'a RunRecord>) -> Metrics {
        let mut by_scenario = BTreeMap::new();
        let mut counts: BTreeMap<ToolOutcome, usize> =
            ToolOutcome::ALL.iter().map(|o| (*o, 0)).collect();
        let mut successes = 0;
        let mut n = 0;
        for r in runs {
            n += 1;
            *counts
                .get_mut(&r.outcome.tool_outcome)
                .expect("all outcomes present") += 1;
            successes += usize::from(r.outcome.task_success);
            by_scenario.insert(format!("{}#{}", r.scenario, r.seed), r.outcome);
        }
        let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        Metrics {
            n,
            success_rate: frac(successes),
            tool_outcome_histogram: counts.into_iter().map(|(o, c)| (o, frac(c))).collect(),
            by_scenario,
        }
    }

    pub fn fraction(&self, o: ToolOutcome) -> f64 {
        self.tool_outcome_histogram.get(&o).copied().unwrap_or(0.0)
    }

    /// Share of runs that did not end with a correct tool call.
    pub fn failure_rate(&self) -> f64 {
        self.fraction(ToolOutcome::NoToolCalled) + self.fraction(ToolOutcome::ToolCallFailed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StepSummary {
    pub tool: Option<String>,
    pub failure: Option<FailureKind>,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunRecord {
    pub scenario: String,
    pub seed: u64,
    pub arch: Architecture,
    pub outcome: OutcomeClass,
    pub final_answer: Option<String>,
    pub steps: Vec<StepSummary>,
}

impl RunRecord {
    fn new(
        scenario: &Scenario,
        seed: u64,
        arch: Architecture,
        result: &AgentResult,
        outcome: OutcomeClass,
    ) -> Self {
        RunRecord {
            scenario: scenario.id.clone(),
            seed,
            arch,
            outcome,
            final_answer: result.final_answer.clone(),
            steps: result
                .steps
                .iter()
                .map(|s| StepSummary {
                    tool: s.action.as_ref().map(|a| a.tool_name.clone()),
                    failure: s.failure,
                    attempts: s.attempts,
                })
                .collect(),
        }
    }
}

/// Results of one fault condition across architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SuiteReport {
    /// `None` means each scenario used its own fault config.
    pub faults: Option<FaultConfig>,
    pub seeds: Vec<u64>,
    pub scenarios: Vec<String>,
    pub metrics: BTreeMap<Architecture, Metrics>,
    /// Sorted by architecture, scenario id, seed.
    pub runs: Vec<RunRecord>,
}

/// Runs the cartesian product scenarios x seeds for each architecture in
/// parallel; output order does not depend on scheduling.
pub fn run_suite(
    scenarios: &[Scenario],
    archs: &[Architecture],
    seeds: &[u64],
    faults: Option<&FaultConfig>,
) -> Result<SuiteReport, ScenarioError> {
    let jobs: Vec<(Architecture, &Scenario, u64)> = archs
        .iter()
        .flat_map(|a| {
            scenarios
                .iter()
                .flat_map(move |s| seeds.iter().map(move |seed| (*a, s, *seed)))
        })
        .collect();
    let mut runs = jobs
        .into_par_iter()
        .map(|(arch, s, seed)| {
            run_scenario(s, arch, seed, faults)
                .map(|(result, class)| RunRecord::new(s, seed, arch, &result, class))
        })
        .collect::<Result<Vec<_>, _>>()?;
    runs.sort_by(|a, b| (a.arch, &a.scenario, a.seed).cmp(&(b.arch, &b.scenario, b.seed)));
    let metrics = archs
        .iter()
        .map(|a| (*a, Metrics::from_runs(runs.iter().filter(|r| r.arch == *a))))
        .collect();
    let mut ids: Vec<String> = scenarios.iter().map(|s| s.id.clone()).collect();
    ids.sort();
    Ok(SuiteReport {
        faults: faults.cloned(),
        seeds: seeds.to_vec(),
        scenarios: ids,
        metrics,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Count(u64),
    List(Vec<u64>),
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::Count(n) => (0..*n).collect(),
            SeedSpec::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SuiteConfig {
    /// Glob patterns, relative to the config file.
    pub scenarios: Vec<String>,
    pub seeds: SeedSpec,
    #[serde(default = "all_archs")]
    pub archs: Vec<Architecture>,
    /// One condition per entry; empty means each scenario's own faults.
    #[serde(default)]
    pub faults: Vec<FaultConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn all_archs() -> Vec<Architecture> {
    Architecture::ALL.to_vec()
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

impl SuiteConfig {
    pub fn load(path: &Path) -> Result<Self, SuiteError> {
        let bad = |message: String| SuiteError::Config {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
        let v = crate::yaml::load_value(&text).map_err(|e| bad(e.to_string()))?;
        let mut cfg: SuiteConfig =
            serde_json::from_value(v.to_json()).map_err(|e| bad(e.to_string()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for f in &cfg.faults {
            f.validate().map_err(|e| bad(e.to_string()))?;
        }
        Ok(cfg)
    }

    /// Scenario files matched by the globs, sorted and de-duplicated.
    pub fn scenario_paths(&self) -> Result<Vec<PathBuf>, SuiteError> {
        let bad = |message: String| SuiteError::Config {
            path: self.base_dir.clone(),
            message,
        };
        let mut out = Vec::new();
        for pat in &self.scenarios {
            let full = self.base_dir.join(pat);
            let entries = glob::glob(&full.to_string_lossy())
                .map_err(|e| bad(format!("bad glob `{pat}`: {e}")))?;
            for entry in entries {
                out.push(entry.map_err(|e| bad(e.to_string()))?);
            }
        }
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(bad("scenario globs matched no files".into()));
        }
        Ok(out)
    }

    pub fn load_scenarios(&self) -> Result<Vec<Scenario>, SuiteError> {
        let scenarios = self
            .scenario_paths()?
            .iter()
            .map(|p| Scenario::load(p))
            .collect::<Result<Vec<_>, _>>()?;
        let mut ids: Vec<&str> = scenarios.iter().map(|s| s.id.as_str()).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(SuiteError::Config {
                path: self.base_dir.clone(),
                message: format!("duplicate scenario id `{}`", w[0]),
            });
        }
        Ok(scenarios)
    }

    /// Fault conditions to run; `None` stands for per-scenario faults.
    pub fn conditions(&self) -> Vec<Option<FaultConfig>> {
        if self.faults.is_empty() {
            vec![None]
        } else {
            self.faults.iter().cloned().map(Some).collect()
        }
    }
}
