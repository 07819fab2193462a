//! Phenomenological spin noise: memory dephasing under entanglement attempts,
//! communication-qubit decoupling decay, gate depolarization, state
//! preparation, ionization and the basis-alternating repetitive (BAR) readout.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hilbert::{gates, HilbertError};
use crate::{Channel, Ket, Matrix, State};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinNoiseError {
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("invalid noise parameter: {0}")]
    InvalidParams(String),
    #[error("eigenstate and superposition decays at t = {t} s admit no Pauli channel")]
    Infeasible { t: f64 },
    #[error("BAR enumeration supports at most {max} readouts, got {reps}")]
    TooManyReps { reps: usize, max: usize },
}

/// Stretched exponential `A·exp(−(x/scale)^stretch) + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub scale: f64,
    pub stretch: f64,
    pub offset: f64,
}

impl DecayFit {
    pub const fn new(amplitude: f64, scale: f64, stretch: f64, offset: f64) -> Self {
        Self {
            amplitude,
            scale,
            stretch,
            offset,
        }
    }

    pub fn validate(&self) -> Result<(), SpinNoiseError> {
        if !(self.amplitude > 0.0
            && self.amplitude <= 1.0
            && self.scale > 0.0
            && self.stretch > 0.0)
        {
            return Err(SpinNoiseError::InvalidParams(format!("decay fit {self:?}")));
        }
        Ok(())
    }

    pub fn value(&self, x: f64) -> f64 {
        self.amplitude * self.decay(x) + self.offset
    }

    /// The decaying factor alone, 1 at x = 0.
    pub fn decay(&self, x: f64) -> f64 {
        (-(x / self.scale).powf(self.stretch)).exp()
    }
}

/// Bloch-length decay of a stored superposition with the memory decoupling pulse.
pub const MEMORY_WITH_DECOUPLING: DecayFit = DecayFit::new(0.875, 5327.0, 1.13, 0.0);
/// Same without the decoupling pulse.
pub const MEMORY_WITHOUT_DECOUPLING: DecayFit = DecayFit::new(0.806, 848.0, 1.21, 0.0);

/// Communication-qubit fidelity decay during dynamical decoupling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplingFits {
    pub eigen: DecayFit,
    pub superposition: DecayFit,
}

impl DecouplingFits {
    pub const ALICE: Self = Self {
        eigen: DecayFit::new(0.4930, 0.459, 1.04, 0.5),
        superposition: DecayFit::new(0.4889, 0.54, 1.07, 0.5),
    };
    pub const BOB: Self = Self {
        eigen: DecayFit::new(0.4738, 0.130, 1.41, 0.5),
        superposition: DecayFit::new(0.4634, 0.177, 1.47, 0.5),
    };
    pub const CHARLIE: Self = Self {
        eigen: DecayFit::new(0.4897, 0.357, 1.67, 0.5),
        superposition: DecayFit::new(0.4936, 0.56, 0.92, 0.5),
    };
}

/// Dephasing that multiplies the memory coherence by the fit's decay factor
/// after `n_attempts` entanglement attempts in total. Stretched exponentials
/// do not compose, so callers pass cumulative counts.
pub fn memory_dephasing_channel(
    n_attempts: u64,
    fit: &DecayFit,
) -> Result<Channel, SpinNoiseError> {
    fit.validate()?;
    let c = fit.decay(n_attempts as f64);
    Ok(Channel::dephasing((1.0 - c) / 2.0)?)
}

/// Tracks the cumulative attempt count of one stored memory state and hands
/// out the incremental dephasing between successive checkpoints.
#[derive(Clone, Debug)]
pub struct DephasingLedger {
    fit: DecayFit,
    attempts: u64,
}

impl DephasingLedger {
    pub fn new(fit: DecayFit) -> Self {
        Self { fit, attempts: 0 }
    }

    pub fn attempts(&self) -> u64 {
        self.attempts
    }

    pub fn advance(&mut self, n_attempts: u64) -> Result<Channel, SpinNoiseError> {
        self.fit.validate()?;
        let before = self.fit.decay(self.attempts as f64);
        self.attempts += n_attempts;
        let ratio = self.fit.decay(self.attempts as f64) / before;
        Ok(Channel::dephasing((1.0 - ratio) / 2.0)?)
    }
}

/// One-time loss of Bloch length from A = 1 to the fit amplitude when a state
/// is stored on the memory.
pub fn storage_channel(fit: &DecayFit) -> Result<Channel, SpinNoiseError> {
    fit.validate()?;
    depolarizing(1.0 - fit.amplitude)
}

/// (p_x, p_y, p_z) of the Pauli channel with equal X and Y flip probabilities
/// whose eigenstate and superposition fidelities follow the two fits at time `t`.
pub fn decoupling_pauli_probabilities(
    t: f64,
    fits: &DecouplingFits,
) -> Result<[f64; 3], SpinNoiseError> {
    fits.eigen.validate()?;
    fits.superposition.validate()?;
    if t < 0.0 {
        return Err(SpinNoiseError::InvalidParams(format!(
            "negative decoupling time {t}"
        )));
    }
    let lz = 2.0 * fits.eigen.value(t) - 1.0;
    let lperp = 2.0 * fits.superposition.value(t) - 1.0;
    let flip = (1.0 - lz) / 4.0;
    let phase = (1.0 - lperp) / 2.0 - flip;
    let tol = 1e-12;
    if flip < -tol || phase < -tol || 1.0 - 2.0 * flip - phase < -tol {
        return Err(SpinNoiseError::Infeasible { t });
    }
    Ok([flip.max(0.0), flip.max(0.0), phase.max(0.0)])
}

pub fn decoupling_channel(t: f64, fits: &DecouplingFits) -> Result<Channel, SpinNoiseError> {
    let [px, py, pz] = decoupling_pauli_probabilities(t, fits)?;
    Ok(Channel::pauli(px, py, pz)?)
}

/// ρ ↦ (1−p)ρ + p·I/2.
pub fn depolarizing(p: f64) -> Result<Channel, SpinNoiseError> {
    Ok(Channel::depolarizing(p, 1)?)
}

/// True if the qubit ionized during this shot.
pub fn ionization_event<R: Rng + ?Sized>(p_ion: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < p_ion
}

/// Replaces an ionized qubit with the maximally mixed state.
pub fn ionize(state: &State, label: &str) -> Result<State, SpinNoiseError> {
    let others: Vec<String> = state
        .labels()
        .iter()
        .filter(|l| *l != label)
        .cloned()
        .collect();
    let keep: Vec<&str> = others.iter().map(String::as_str).collect();
    let mixed = State::maximally_mixed(label, 2);
    if keep.is_empty() {
        return Ok(mixed);
    }
    let rest = state.partial_trace(&keep)?;
    let order: Vec<&str> = state.labels().iter().map(String::as_str).collect();
    Ok(rest.tensor(&mixed)?.permuted(&order)?)
}

/// The six cardinal single-qubit states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cardinal {
    #[serde(rename = "+X")]
    PlusX,
    #[serde(rename = "-X")]
    MinusX,
    #[serde(rename = "+Y")]
    PlusY,
    #[serde(rename = "-Y")]
    MinusY,
    #[serde(rename = "+Z")]
    PlusZ,
    #[serde(rename = "-Z")]
    MinusZ,
}

impl Cardinal {
    pub const ALL: [Cardinal; 6] = [
        Cardinal::PlusX,
        Cardinal::MinusX,
        Cardinal::PlusY,
        Cardinal::MinusY,
        Cardinal::PlusZ,
        Cardinal::MinusZ,
    ];

    pub fn bloch(&self) -> [f64; 3] {
        match self {
            Cardinal::PlusX => [1.0, 0.0, 0.0],
            Cardinal::MinusX => [-1.0, 0.0, 0.0],
            Cardinal::PlusY => [0.0, 1.0, 0.0],
            Cardinal::MinusY => [0.0, -1.0, 0.0],
            Cardinal::PlusZ => [0.0, 0.0, 1.0],
            Cardinal::MinusZ => [0.0, 0.0, -1.0],
        }
    }

    /// Unitary taking |0⟩ to this state.
    pub fn preparation(&self) -> Matrix {
        use std::f64::consts::{FRAC_PI_2, PI};
        match self {
            Cardinal::PlusX => gates::rotation([0.0, 1.0, 0.0], FRAC_PI_2),
            Cardinal::MinusX => gates::rotation([0.0, 1.0, 0.0], -FRAC_PI_2),
            Cardinal::PlusY => gates::rotation([1.0, 0.0, 0.0], -FRAC_PI_2),
            Cardinal::MinusY => gates::rotation([1.0, 0.0, 0.0], FRAC_PI_2),
            Cardinal::PlusZ => Matrix::identity(2),
            Cardinal::MinusZ => gates::rotation([1.0, 0.0, 0.0], PI),
        }
    }

    pub fn ket(&self, label: &str) -> Ket {
        Ket::basis(label, 2, 0)
            .apply(&self.preparation(), &[label])
            .expect("single-qubit rotation")
    }

    pub fn name(&self) -> &'static str {
        match self {
            Cardinal::PlusX => "+X",
            Cardinal::MinusX => "-X",
            Cardinal::PlusY => "+Y",
            Cardinal::MinusY => "-Y",
            Cardinal::PlusZ => "+Z",
            Cardinal::MinusZ => "-Z",
        }
    }
}

impl std::str::FromStr for Cardinal {
    type Err = SpinNoiseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Cardinal::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SpinNoiseError::InvalidParams(format!("unknown cardinal state `{s}`")))
    }
}

/// Cardinal state after an initialization error (population left in |1⟩ with
/// probability `p_init`), the ideal rotation, and a depolarizing MW error.
pub fn prepare_input_state(
    which: Cardinal,
    label: &str,
    p_init: f64,
    p_mw: f64,
) -> Result<State, SpinNoiseError> {
    if !(0.0..=1.0).contains(&p_init) {
        return Err(SpinNoiseError::InvalidParams(format!("p_init {p_init}")));
    }
    let init = State::new(&[label], &[2], Matrix::diagonal(&[1.0 - p_init, p_init]))?;
    Ok(init
        .apply_unitary(&which.preparation(), &[label])?
        .apply_channel(&depolarizing(p_mw)?, &[label])?)
}

/// Per-block parameters of the BAR memory readout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    /// Communication-qubit assignment fidelity for |0⟩.
    pub comm_f0: f64,
    /// Communication-qubit assignment fidelity for |1⟩.
    pub comm_f1: f64,
    /// Memory flip probability before the first block.
    pub initial_flip: f64,
    /// Memory flip probability after each block.
    pub block_flip: f64,
    /// Error of the memory-to-communication mapping gate.
    pub map_error: f64,
}

impl ReadoutParams {
    pub const PERFECT: Self = Self {
        comm_f0: 1.0,
        comm_f1: 1.0,
        initial_flip: 0.0,
        block_flip: 0.0,
        map_error: 0.0,
    };
    pub const BOB: Self = Self {
        comm_f0: 0.93,
        comm_f1: 0.995,
        initial_flip: 0.004,
        block_flip: 0.0,
        map_error: 0.03,
    };
    pub const CHARLIE: Self = Self {
        comm_f0: 0.92,
        comm_f1: 0.99,
        initial_flip: 0.008,
        block_flip: 0.01,
        map_error: 0.055,
    };

    pub fn validate(&self) -> Result<(), SpinNoiseError> {
        let v = [
            self.comm_f0,
            self.comm_f1,
            self.initial_flip,
            self.block_flip,
            self.map_error,
        ];
        if v.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(SpinNoiseError::InvalidParams(format!(
                "readout parameters {self:?}"
            )));
        }
        Ok(())
    }

    fn comm_outcome_probability(&self, comm: u8, outcome: u8) -> f64 {
        match (comm, outcome) {
            (0, 0) => self.comm_f0,
            (0, _) => 1.0 - self.comm_f0,
            (_, 1) => self.comm_f1,
            _ => 1.0 - self.comm_f1,
        }
    }
}

/// Memory bit that block `k` (1-based) maps onto communication outcome 0.
fn block_target(k: usize) -> u8 {
    if k % 2 == 1 {
        0
    } else {
        1
    }
}

/// Memory-bit estimate implied by communication outcome `o` in block `k`.
fn block_estimate(k: usize, o: u8) -> u8 {
    if block_target(k) == 0 {
        o
    } else {
        1 - o
    }
}

#[derive(Clone, Debug)]
pub struct BarResult {
    pub assigned: u8,
    /// Raw communication-qubit outcomes of all blocks.
    pub pattern: Vec<u8>,
    pub consistent: bool,
    /// Memory state after the readout.
    pub memory: State,
}

/// Samples one BAR readout of a single-qubit memory state.
pub fn bar_readout<R: Rng + ?Sized>(
    memory: &State,
    reps: usize,
    params: &ReadoutParams,
    rng: &mut R,
) -> Result<BarResult, SpinNoiseError> {
    params.validate()?;
    if reps == 0 || memory.dims() != [2] {
        return Err(SpinNoiseError::InvalidParams(
            "BAR needs reps ≥ 1 on a single qubit".into(),
        ));
    }
    let p1 = memory.matrix()[(1, 1)].re;
    let mut m = u8::from(rng.random::<f64>() < p1);
    if rng.random::<f64>() < params.initial_flip {
        m ^= 1;
    }
    let mut pattern = Vec::with_capacity(reps);
    let mut estimates = Vec::with_capacity(reps);
    for k in 1..=reps {
        let mut comm = u8::from(m != block_target(k));
        if rng.random::<f64>() < params.map_error {
            comm ^= 1;
        }
        let o = u8::from(rng.random::<f64>() >= params.comm_outcome_probability(comm, 0));
        pattern.push(o);
        estimates.push(block_estimate(k, o));
        if rng.random::<f64>() < params.block_flip {
            m ^= 1;
        }
    }
    let assigned = estimates[0];
    let consistent = estimates.iter().all(|e| *e == assigned);
    Ok(BarResult {
        assigned,
        pattern,
        consistent,
        memory: State::basis(&memory.labels()[0], 2, m as usize),
    })
}

/// Exact outcome probabilities of a BAR readout: `table[m0][a][c]` is the
/// probability of assigning `a` with consistency `c` given memory bit `m0`.
pub fn bar_outcome_probabilities(
    params: &ReadoutParams,
    reps: usize,
) -> Result<[[[f64; 2]; 2]; 2], SpinNoiseError> {
    params.validate()?;
    if reps == 0 {
        return Err(SpinNoiseError::InvalidParams("BAR needs reps ≥ 1".into()));
    }
    let mut table = [[[0.0; 2]; 2]; 2];
    for m0 in 0..2u8 {
        // (memory bit, assigned bit, consistent) → probability
        let mut dist: Vec<((u8, u8, bool), f64)> = vec![
            ((m0, 0, true), 1.0 - params.initial_flip),
            ((m0 ^ 1, 0, true), params.initial_flip),
        ];
        for k in 1..=reps {
            let mut next: Vec<((u8, u8, bool), f64)> = Vec::new();
            for &((m, a, ok), p) in &dist {
                let comm = u8::from(m != block_target(k));
                for (err, pe) in [(0u8, 1.0 - params.map_error), (1, params.map_error)] {
                    let c = comm ^ err;
                    for o in 0..2u8 {
                        let po = params.comm_outcome_probability(c, o);
                        let est = block_estimate(k, o);
                        let (a2, ok2) = if k == 1 {
                            (est, true)
                        } else {
                            (a, ok && est == a)
                        };
                        for (fl, pf) in [(0u8, 1.0 - params.block_flip), (1, params.block_flip)] {
                            let w = p * pe * po * pf;
                            if w > 0.0 {
                                next.push(((m ^ fl, a2, ok2), w));
                            }
                        }
                    }
                }
            }
            dist = merge(next);
        }
        for ((_, a, ok), p) in dist {
            table[m0 as usize][a as usize][ok as usize] += p;
        }
    }
    Ok(table)
}

fn merge(items: Vec<((u8, u8, bool), f64)>) -> Vec<((u8, u8, bool), f64)> {
    let mut out: Vec<((u8, u8, bool), f64)> = Vec::new();
    for (k, p) in items {
        match out.iter_mut().find(|(q, _)| *q == k) {
            Some(entry) => entry.1 += p,
            None => out.push((k, p)),
        }
    }
    out
}

/// Average assignment fidelity and accepted fraction per number of readouts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BarCurves {
    pub fidelity: Vec<f64>,
    pub accepted: Vec<f64>,
}

pub const BAR_MAX_REPS: usize = 5;

pub fn bar_model_curves(
    params: &ReadoutParams,
    max_reps: usize,
) -> Result<BarCurves, SpinNoiseError> {
    if max_reps > BAR_MAX_REPS {
        return Err(SpinNoiseError::TooManyReps {
            reps: max_reps,
            max: BAR_MAX_REPS,
        });
    }
    let mut curves = BarCurves {
        fidelity: Vec::new(),
        accepted: Vec::new(),
    };
    for reps in 1..=max_reps {
        let t = bar_outcome_probabilities(params, reps)?;
        let mut fid = 0.0;
        let mut acc = 0.0;
        for m0 in 0..2 {
            let ok = t[m0][0][1] + t[m0][1][1];
            fid += t[m0][m0][1] / ok / 2.0;
            acc += ok / 2.0;
        }
        curves.fidelity.push(fid);
        curves.accepted.push(acc);
    }
    Ok(curves)
}
