//! Executes a scenario into an in-memory report.

use qnet_sim::photonic::{
    psb_conditioned_correlations, single_error_budget, Basis, Epoch, ErrorSource, FlagSelector,
    LinkError,
};
use qnet_sim::protocol::{
    fidelity_from_counts, teleport_error_budget, ProtocolConfig, TeleportMode, Teleportation,
};
use qnet_sim::spin_noise::{
    bar_model_curves, Cardinal, DecayFit, BAR_MAX_REPS, MEMORY_WITHOUT_DECOUPLING,
    MEMORY_WITH_DECOUPLING,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::rates::{estimate_rate, RateModel};
use crate::scenario::{BudgetTarget, Output, RunMode, Scenario};
use crate::{HarnessError, ARTIFACT_VERSION};

/// Random stream of one shot. The key depends only on the seed and the
/// scenario name, the stream on the shot index, so results do not depend on
/// scheduling or thread count.
pub fn shot_rng(seed: u64, scenario: &str, shot: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(scenario.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
    rng.set_stream(shot);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FidelityRow {
    pub mode: TeleportMode,
    /// Input state name, or `average` for the six-state mean.
    pub state: String,
    /// Exact fidelity (analytic) or mean exact fidelity over accepted shots.
    pub fidelity: f64,
    pub std_error: Option<f64>,
    /// Estimate from simulated readouts of Alice's qubit.
    pub tomography_fidelity: Option<f64>,
    pub tomography_std_error: Option<f64>,
    /// Probability (analytic) or fraction (sampled) of tries that teleport.
    pub accept_probability: f64,
    pub tries: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetRow {
    pub target: BudgetTarget,
    pub mode: Option<TeleportMode>,
    pub source: String,
    pub infidelity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BsmRow {
    /// `m<memory>c<comm>`, or `no-feedforward`.
    pub outcome: String,
    pub fidelity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub link: String,
    pub flag: String,
    pub basis: String,
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateRow {
    pub window_ns: f64,
    pub mode: TeleportMode,
    /// `model` for the analytic rate, `sampled` for accepted shots per
    /// simulated second.
    pub source: String,
    pub fidelity: f64,
    pub rate_hz: f64,
    pub seconds_per_event: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BarRow {
    pub node: String,
    pub reps: usize,
    pub fidelity: f64,
    pub accepted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryRow {
    pub curve: String,
    pub attempts: u64,
    pub bloch_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub artifact_version: String,
    pub scenario: Scenario,
    pub fidelity: Vec<FidelityRow>,
    pub budget: Vec<BudgetRow>,
    pub bsm_breakdown: Vec<BsmRow>,
    pub correlations: Vec<CorrelationRow>,
    pub rates: Vec<RateRow>,
    pub bar_curves: Vec<BarRow>,
    pub memory_curves: Vec<MemoryRow>,
}

impl RunReport {
    /// Six-state average of `mode`, if it was run.
    pub fn average(&self, mode: TeleportMode) -> Option<f64> {
        self.fidelity
            .iter()
            .find(|r| r.mode == mode && r.state == "average")
            .map(|r| r.fidelity)
    }
}

pub fn run(scenario: &Scenario) -> Result<RunReport, HarnessError> {
    scenario.validate()?;
    let tp = Teleportation::new(&scenario.protocol)?;
    let wants = |o: Output| scenario.outputs.contains(&o);
    let mut report = RunReport {
        artifact_version: ARTIFACT_VERSION.to_string(),
        scenario: scenario.clone(),
        fidelity: Vec::new(),
        budget: Vec::new(),
        bsm_breakdown: Vec::new(),
        correlations: Vec::new(),
        rates: Vec::new(),
        bar_curves: Vec::new(),
        memory_curves: Vec::new(),
    };
    let mut sampled_rates = Vec::new();
    if wants(Output::FidelityTable) {
        for (m, &mode) in scenario.teleport_modes.iter().enumerate() {
            match scenario.mode {
                RunMode::Analytic => report.fidelity.extend(analytic_rows(&tp, mode)?),
                RunMode::MonteCarlo => {
                    let (rows, rate) = sampled_rows(&tp, scenario, m as u64, mode)?;
                    report.fidelity.extend(rows);
                    sampled_rates.push(rate);
                }
            }
        }
    }
    if wants(Output::ErrorBudget) {
        report.budget = budget_rows(
            &scenario.protocol,
            &scenario.budget,
            &scenario.teleport_modes,
        )?;
    }
    if wants(Output::BsmBreakdown) {
        report.bsm_breakdown = bsm_rows(&tp)?;
    }
    if wants(Output::Correlations) {
        report.correlations = correlation_rows(&tp)?;
    }
    if wants(Output::Rates) {
        report.rates = rate_rows(
            &scenario.protocol,
            &scenario.window_sweep_ns,
            &scenario.teleport_modes,
        )?;
        report.rates.extend(sampled_rates);
    }
    if wants(Output::BarCurves) {
        report.bar_curves = bar_rows(&scenario.protocol)?;
    }
    if wants(Output::MemoryCurves) {
        report.memory_curves = memory_rows(&scenario.protocol.noise.bob_memory_dephasing);
    }
    Ok(report)
}

fn analytic_rows(tp: &Teleportation, mode: TeleportMode) -> Result<Vec<FidelityRow>, HarnessError> {
    let mut rows = Vec::new();
    for input in Cardinal::ALL {
        let out = tp.analytic(input, mode)?;
        rows.push(FidelityRow {
            mode,
            state: input.name().to_string(),
            fidelity: out.fidelity().unwrap_or(f64::NAN),
            std_error: None,
            tomography_fidelity: None,
            tomography_std_error: None,
            accept_probability: out.accept_probability.unwrap_or(0.0),
            tries: None,
        });
    }
    rows.push(average_row(mode, &rows, None));
    Ok(rows)
}

fn average_row(mode: TeleportMode, rows: &[FidelityRow], tries: Option<u64>) -> FidelityRow {
    let n = rows.len() as f64;
    let mean = |f: fn(&FidelityRow) -> Option<f64>| -> Option<f64> {
        rows.iter().map(f).sum::<Option<f64>>().map(|s| s / n)
    };
    // Independent per-state estimates: the error of the mean adds in quadrature.
    let pooled = |f: fn(&FidelityRow) -> Option<f64>| -> Option<f64> {
        rows.iter()
            .map(f)
            .map(|e| e.map(|e| e * e))
            .sum::<Option<f64>>()
            .map(|s| s.sqrt() / n)
    };
    FidelityRow {
        mode,
        state: "average".into(),
        fidelity: rows.iter().map(|r| r.fidelity).sum::<f64>() / n,
        std_error: pooled(|r| r.std_error),
        tomography_fidelity: mean(|r| r.tomography_fidelity),
        tomography_std_error: pooled(|r| r.tomography_std_error),
        accept_probability: rows.iter().map(|r| r.accept_probability).sum::<f64>() / n,
        tries: tries.or_else(|| rows.iter().map(|r| r.tries).sum()),
    }
}

/// Per-shot summary kept for the reduction.
struct ShotSummary {
    fidelity: Option<f64>,
    tomography: Option<(i8, u8)>,
    wall_time_s: f64,
}

fn sampled_rows(
    tp: &Teleportation,
    scenario: &Scenario,
    mode_index: u64,
    mode: TeleportMode,
) -> Result<(Vec<FidelityRow>, RateRow), HarnessError> {
    let shots = scenario.shots;
    let readout = scenario.protocol.noise.alice_readout;
    let mut rows = Vec::new();
    let mut accepted_total = 0u64;
    let mut wall_total = 0.0;
    for (k, input) in Cardinal::ALL.into_iter().enumerate() {
        let first = (mode_index * Cardinal::ALL.len() as u64 + k as u64) * shots;
        let summaries: Vec<ShotSummary> = (0..shots)
            .into_par_iter()
            .map(|i| {
                let mut rng = shot_rng(scenario.seed, &scenario.name, first + i);
                let out = tp.shot(input, mode, &mut rng)?;
                Ok(ShotSummary {
                    fidelity: out.fidelity(),
                    tomography: out.tomography,
                    wall_time_s: out.wall_time_s,
                })
            })
            .collect::<Result<_, HarnessError>>()?;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut accepted = 0u64;
        let mut plus = (0u64, 0u64);
        let mut minus = (0u64, 0u64);
        for s in &summaries {
            wall_total += s.wall_time_s;
            if let Some(f) = s.fidelity {
                accepted += 1;
                sum += f;
                sum_sq += f * f;
            }
            if let Some((direction, bit)) = s.tomography {
                let slot = if direction > 0 { &mut plus } else { &mut minus };
                slot.0 += u64::from(bit == 0);
                slot.1 += 1;
            }
        }
        accepted_total += accepted;
        let (mean, std_error) = if accepted > 0 {
            let n = accepted as f64;
            let mean = sum / n;
            let var = (sum_sq / n - mean * mean).max(0.0);
            (mean, Some((var / n).sqrt()))
        } else {
            (f64::NAN, None)
        };
        let tomo = (plus.1 + minus.1 > 0).then(|| fidelity_from_counts(plus, minus, readout));
        rows.push(FidelityRow {
            mode,
            state: input.name().to_string(),
            fidelity: mean,
            std_error,
            tomography_fidelity: tomo.map(|t| t.fidelity),
            tomography_std_error: tomo.map(|t| t.std_error),
            accept_probability: accepted as f64 / shots as f64,
            tries: Some(shots),
        });
    }
    let average = average_row(mode, &rows, Some(shots * Cardinal::ALL.len() as u64));
    let rate_hz = if wall_total > 0.0 {
        accepted_total as f64 / wall_total
    } else {
        0.0
    };
    let rate = RateRow {
        window_ns: scenario.protocol.detection_window_ns,
        mode,
        source: "sampled".into(),
        fidelity: average.fidelity,
        rate_hz,
        seconds_per_event: 1.0 / rate_hz,
    };
    rows.push(average);
    Ok((rows, rate))
}

pub fn budget_rows(
    cfg: &ProtocolConfig,
    targets: &[BudgetTarget],
    modes: &[TeleportMode],
) -> Result<Vec<BudgetRow>, HarnessError> {
    let mut rows = Vec::new();
    let specs = cfg.link_specs()?;
    for &target in targets {
        match target {
            BudgetTarget::Ab | BudgetTarget::Bc => {
                let spec = &specs[usize::from(target == BudgetTarget::Bc)];
                for source in ErrorSource::ALL {
                    rows.push(BudgetRow {
                        target,
                        mode: None,
                        source: error_source_name(source).into(),
                        infidelity: single_error_budget(spec, source)?,
                    });
                }
                rows.push(BudgetRow {
                    target,
                    mode: None,
                    source: "combined".into(),
                    infidelity: spec.herald()?.infidelity(),
                });
            }
            BudgetTarget::Teleport => {
                for &mode in modes {
                    for (source, infidelity) in teleport_error_budget(cfg, mode)? {
                        rows.push(BudgetRow {
                            target,
                            mode: Some(mode),
                            source: source.name().into(),
                            infidelity,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

fn error_source_name(source: ErrorSource) -> &'static str {
    match source {
        ErrorSource::Protocol => "protocol",
        ErrorSource::DarkCounts => "dark-counts",
        ErrorSource::Visibility => "visibility",
        ErrorSource::DoubleExcitation => "double-excitation",
        ErrorSource::PhaseUncertainty => "phase-uncertainty",
    }
}

fn bsm_rows(tp: &Teleportation) -> Result<Vec<BsmRow>, HarnessError> {
    let per = tp.per_bsm_outcome_fidelity()?;
    let mut rows = Vec::new();
    for (memory, by_comm) in per.iter().enumerate() {
        for (comm, fidelity) in by_comm.iter().enumerate() {
            rows.push(BsmRow {
                outcome: format!("m{memory}c{comm}"),
                fidelity: *fidelity,
            });
        }
    }
    rows.push(BsmRow {
        outcome: "no-feedforward".into(),
        fidelity: tp.no_feedforward_fidelity()?,
    });
    Ok(rows)
}

fn correlation_rows(tp: &Teleportation) -> Result<Vec<CorrelationRow>, HarnessError> {
    let mut selectors = Vec::new();
    for epoch in [Epoch::During, Epoch::After] {
        let tag = epoch_name(epoch);
        selectors.push((FlagSelector::Node(0, epoch), format!("node0-{tag}")));
        selectors.push((FlagSelector::Node(1, epoch), format!("node1-{tag}")));
        selectors.push((FlagSelector::Either(epoch), format!("either-{tag}")));
    }
    let mut rows = Vec::new();
    for (link, name) in tp.links().iter().zip(["ab", "bc"]) {
        for (flag, flag_name) in &selectors {
            for (basis, basis_name) in [(Basis::X, "x"), (Basis::Y, "y"), (Basis::Z, "z")] {
                let p = match psb_conditioned_correlations(link, *flag, basis) {
                    Ok(p) => p,
                    Err(LinkError::EmptyConditioning) => continue,
                    Err(e) => return Err(e.into()),
                };
                rows.push(CorrelationRow {
                    link: name.into(),
                    flag: flag_name.clone(),
                    basis: basis_name.into(),
                    p00: p[0],
                    p01: p[1],
                    p10: p[2],
                    p11: p[3],
                });
            }
        }
    }
    Ok(rows)
}

fn epoch_name(epoch: Epoch) -> &'static str {
    match epoch {
        Epoch::During => "during",
        Epoch::After => "after",
    }
}

/// Fidelity and model rate for every sweep window and mode. Each window
/// rebuilds the links, so the visibility table applies.
pub fn rate_rows(
    cfg: &ProtocolConfig,
    windows: &[f64],
    modes: &[TeleportMode],
) -> Result<Vec<RateRow>, HarnessError> {
    let mut rows = Vec::new();
    for &window_ns in windows {
        let mut c = cfg.clone();
        c.detection_window_ns = window_ns;
        let tp = Teleportation::new(&c)?;
        for &mode in modes {
            let rate_hz = estimate_rate(&RateModel::teleportation(&tp, mode)?)?;
            rows.push(RateRow {
                window_ns,
                mode,
                source: "model".into(),
                fidelity: tp.average_fidelity(mode)?,
                rate_hz,
                seconds_per_event: 1.0 / rate_hz,
            });
        }
    }
    Ok(rows)
}

fn bar_rows(cfg: &ProtocolConfig) -> Result<Vec<BarRow>, HarnessError> {
    let mut rows = Vec::new();
    for (node, params) in [
        ("bob", &cfg.noise.bob_readout),
        ("charlie", &cfg.noise.charlie_readout),
    ] {
        let curves = bar_model_curves(params, BAR_MAX_REPS)?;
        for (k, (fidelity, accepted)) in curves.fidelity.iter().zip(&curves.accepted).enumerate() {
            rows.push(BarRow {
                node: node.into(),
                reps: k + 1,
                fidelity: *fidelity,
                accepted: *accepted,
            });
        }
    }
    Ok(rows)
}

const MEMORY_GRID_STEP: u64 = 250;
const MEMORY_GRID_MAX: u64 = 10_000;

fn memory_rows(bob: &DecayFit) -> Vec<MemoryRow> {
    let curves = [
        ("with-decoupling", &MEMORY_WITH_DECOUPLING),
        ("without-decoupling", &MEMORY_WITHOUT_DECOUPLING),
        ("bob-protocol", bob),
    ];
    let mut rows = Vec::new();
    for (curve, fit) in curves {
        for attempts in (0..=MEMORY_GRID_MAX).step_by(MEMORY_GRID_STEP as usize) {
            rows.push(MemoryRow {
                curve: curve.into(),
                attempts,
                bloch_length: fit.value(attempts as f64),
            });
        }
    }
    rows
}
