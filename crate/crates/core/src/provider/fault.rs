//! Fault injection for mock model output.

use std::sync::LazyLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ProviderError;

pub const NO_TOOL_SENTENCE: &str = "I think I should search for that.";

const HALLUCINATED_TOOL: &str = "frobnicate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    MalformedJson,
    WrongKey,
    HallucinatedTool,
    NoTool,
}

impl FaultKind {
    /// Sampling priority, highest first.
    pub const PRIORITY: [FaultKind; 4] = [
        FaultKind::MalformedJson,
        FaultKind::WrongKey,
        FaultKind::HallucinatedTool,
        FaultKind::NoTool,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "camelCase", default)]
pub struct FaultConfig {
    pub seed: u64,
    pub p_malformed_json: f64,
    pub p_wrong_key: f64,
    pub p_hallucinated_tool: f64,
    pub p_no_tool: f64,
}

impl FaultConfig {
    pub fn probability(&self, kind: FaultKind) -> f64 {
        match kind {
            FaultKind::MalformedJson => self.p_malformed_json,
            FaultKind::WrongKey => self.p_wrong_key,
            FaultKind::HallucinatedTool => self.p_hallucinated_tool,
            FaultKind::NoTool => self.p_no_tool,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        for kind in FaultKind::PRIORITY {
            let p = self.probability(kind);
            if !(0.0..=1.0).contains(&p) {
                return Err(ProviderError::Config(format!(
                    "fault probability for {kind:?} must be in [0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_clean(&self) -> bool {
        FaultKind::PRIORITY
            .iter()
            .all(|k| self.probability(*k) == 0.0)
    }
}

/// Draws at most one fault per call.
///
/// Each call consumes exactly four uniforms, one per fault kind, so the
/// stream position does not depend on which fault fired.
#[derive(Debug, Clone)]
pub struct FaultSampler {
    config: FaultConfig,
    rng: ChaCha8Rng,
}

impl FaultSampler {
    pub fn new(config: FaultConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        FaultSampler { config, rng }
    }

    pub fn config(&self) -> &FaultConfig {
        &self.config
    }

    pub fn sample(&mut self) -> Option<FaultKind> {
        let draws: [f64; 4] = std::array::from_fn(|_| self.rng.random::<f64>());
        FaultKind::PRIORITY
            .into_iter()
            .zip(draws)
            .find(|(kind, u)| *u < self.config.probability(*kind))
            .map(|(kind, _)| kind)
    }
}

static NAME_KEY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#""name"(\s*):"#).unwrap());
static ARGUMENTS_KEY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#""arguments"(\s*):"#).unwrap());
static NAME_VALUE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"("name"\s*:\s*)"(?:[^"\\]|\\.)*""#).unwrap());

/// Corrupts a clean model response the way a weak model might.
pub fn apply_fault(text: &str, fault: FaultKind) -> String {
    match fault {
        FaultKind::MalformedJson => match text.rfind(['}', ']']) {
            Some(i) => format!("{}{}", &text[..i], &text[i + 1..]),
            None => text.to_string(),
        },
        FaultKind::WrongKey => {
            let renamed = NAME_KEY.replace_all(text, "\"tool_name\"$1:");
            ARGUMENTS_KEY
                .replace_all(&renamed, "\"args\"$1:")
                .into_owned()
        }
        FaultKind::HallucinatedTool => NAME_VALUE
            .replacen(text, 1, format!("${{1}}\"{HALLUCINATED_TOOL}\""))
            .into_owned(),
        FaultKind::NoTool => NO_TOOL_SENTENCE.to_string(),
    }
}
