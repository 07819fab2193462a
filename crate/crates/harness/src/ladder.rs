//! Cumulative improvement ladder: starting from a baseline configuration,
//! switch on one improvement at a time and report fidelity and rate.

use qnet_sim::protocol::{ProtocolConfig, TeleportMode, Teleportation};
use serde::{Deserialize, Serialize};

use crate::rates::{estimate_rate, RateModel};
use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Toggle {
    /// Repeated basis-alternating memory readout instead of a single readout.
    BarReadout,
    /// Bob's memory dephasing with the decoupling pulse.
    MemoryCoherence,
    /// Rejection of heralds accompanied by a PSB detection.
    TailoredHeralding,
}

impl Toggle {
    pub const ALL: [Toggle; 3] = [
        Toggle::BarReadout,
        Toggle::MemoryCoherence,
        Toggle::TailoredHeralding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Toggle::BarReadout => "bar-readout",
            Toggle::MemoryCoherence => "memory-coherence",
            Toggle::TailoredHeralding => "tailored-heralding",
        }
    }

    /// Sets the improved value, taken from the default configuration.
    pub fn apply(self, cfg: &mut ProtocolConfig) {
        let improved = ProtocolConfig::default();
        match self {
            Toggle::BarReadout => cfg.bar_reps = improved.bar_reps,
            Toggle::MemoryCoherence => {
                cfg.noise.bob_memory_dephasing = improved.noise.bob_memory_dephasing
            }
            Toggle::TailoredHeralding => cfg.set_psb_rejection(true),
        }
    }
}

impl std::str::FromStr for Toggle {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s.trim())
            .ok_or_else(|| HarnessError::Config(format!("unknown toggle `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LadderRow {
    /// `baseline`, or the toggle added in this row.
    pub step: String,
    pub fidelity: f64,
    pub rate_hz: f64,
    pub seconds_per_event: f64,
}

/// Baseline row followed by one row per toggle, each adding to the previous.
/// Fidelities are conditional six-state averages.
pub fn improvement_ladder(
    baseline: &ProtocolConfig,
    toggles: &[Toggle],
) -> Result<Vec<LadderRow>, HarnessError> {
    let mode = TeleportMode::Conditional;
    let mut cfg = baseline.clone();
    let mut rows = vec![ladder_row("baseline", &cfg, mode)?];
    for toggle in toggles {
        toggle.apply(&mut cfg);
        rows.push(ladder_row(toggle.name(), &cfg, mode)?);
    }
    Ok(rows)
}

fn ladder_row(
    step: &str,
    cfg: &ProtocolConfig,
    mode: TeleportMode,
) -> Result<LadderRow, HarnessError> {
    cfg.validate()?;
    let tp = Teleportation::new(cfg)?;
    let rate_hz = estimate_rate(&RateModel::teleportation(&tp, mode)?)?;
    Ok(LadderRow {
        step: step.into(),
        fidelity: tp.average_fidelity(mode)?,
        rate_hz,
        seconds_per_event: 1.0 / rate_hz,
    })
}
