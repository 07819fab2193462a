//! Scenario files. The `[protocol]` table holds overrides that are merged key
//! by key onto the default protocol configuration, so a scenario only lists
//! what it changes. Unknown keys are rejected.

use std::path::Path;

use qnet_sim::protocol::{ProtocolConfig, TeleportMode};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Analytic,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Output {
    FidelityTable,
    ErrorBudget,
    BsmBreakdown,
    Correlations,
    Rates,
    BarCurves,
    MemoryCurves,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetTarget {
    Ab,
    Bc,
    Teleport,
}

impl std::str::FromStr for BudgetTarget {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s.to_ascii_lowercase().as_str() {
            "ab" => Ok(Self::Ab),
            "bc" => Ok(Self::Bc),
            "teleport" => Ok(Self::Teleport),
            other => Err(HarnessError::Config(format!(
                "unknown budget target `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub mode: RunMode,
    /// Tries per input state in Monte Carlo mode.
    #[serde(default)]
    pub shots: u64,
    #[serde(default = "default_modes")]
    pub teleport_modes: Vec<TeleportMode>,
    #[serde(default = "default_outputs")]
    pub outputs: Vec<Output>,
    #[serde(default = "default_budget")]
    pub budget: Vec<BudgetTarget>,
    /// Detection windows of the rate and fidelity sweep.
    #[serde(default = "default_windows")]
    pub window_sweep_ns: Vec<f64>,
    #[serde(default)]
    pub protocol: ProtocolConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_modes() -> Vec<TeleportMode> {
    vec![TeleportMode::Conditional]
}

fn default_outputs() -> Vec<Output> {
    vec![Output::FidelityTable]
}

fn default_budget() -> Vec<BudgetTarget> {
    vec![BudgetTarget::Teleport]
}

fn default_windows() -> Vec<f64> {
    vec![15.0, 10.0, 7.5]
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        let overrides = match table.remove("protocol") {
            Some(Value::Table(t)) => t,
            Some(_) => return Err(HarnessError::Config("`protocol` must be a table".into())),
            None => Table::new(),
        };
        let mut protocol = Value::try_from(ProtocolConfig::default())
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        merge(&mut protocol, Value::Table(overrides), "protocol")?;
        table.insert("protocol".into(), protocol);
        let scenario: Scenario = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.name.trim().is_empty() {
            return Err(HarnessError::Config("scenario needs a name".into()));
        }
        if self.mode == RunMode::MonteCarlo && self.shots < 1 {
            return Err(HarnessError::Config(
                "Monte Carlo mode needs at least one shot".into(),
            ));
        }
        if self.teleport_modes.is_empty() {
            return Err(HarnessError::Config(
                "no teleportation mode selected".into(),
            ));
        }
        if self.window_sweep_ns.iter().any(|w| !(*w > 0.0)) {
            return Err(HarnessError::Config(
                "sweep windows must be positive".into(),
            ));
        }
        self.protocol.validate()?;
        Ok(())
    }

    /// The fully resolved scenario as TOML; parsing it gives back `self`.
    pub fn effective_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

/// Overwrites the leaves of `base` with those of `over`. Tables merge
/// recursively; any key absent from `base` is an error.
fn merge(base: &mut Value, over: Value, path: &str) -> Result<(), HarnessError> {
    match (base, over) {
        (Value::Table(base), Value::Table(over)) => {
            for (key, value) in over {
                let child = format!("{path}.{key}");
                let slot = base
                    .get_mut(&key)
                    .ok_or_else(|| HarnessError::Config(format!("unknown key `{child}`")))?;
                merge(slot, value, &child)?;
            }
            Ok(())
        }
        (Value::Table(_), _) => Err(HarnessError::Config(format!("`{path}` must be a table"))),
        (slot, value) => {
            *slot = value;
            Ok(())
        }
    }
}
