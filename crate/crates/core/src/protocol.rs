//! Three-node teleportation sequence: Alice–Bob and Bob–Charlie links,
//! entanglement swapping on Bob, feed-forward and storage at Charlie,
//! Charlie's Bell-state measurement and Alice's correction.
//!
//! The same sequence runs in two ways. [`Teleportation::analytic`] averages
//! exactly over measurement outcomes, herald signs and the number of
//! attempts of the second link. [`Teleportation::shot`] samples one run of
//! the node state machines, which talk through a [`MessageQueue`].

use std::collections::{BTreeMap, VecDeque};
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hilbert::{gates, HilbertError};
use crate::photonic::{
    herald_link, ErrorSource, HeraldedLink, LinkError, LinkSpec, VisibilityTable,
};
use crate::spin_noise::{
    bar_outcome_probabilities, bar_readout, decoupling_pauli_probabilities, depolarizing,
    ionization_event, ionize, memory_dephasing_channel, prepare_input_state, storage_channel,
    Cardinal, DecayFit, DecouplingFits, ReadoutParams, SpinNoiseError, MEMORY_WITH_DECOUPLING,
};
use crate::{Channel, Ket, Matrix, State};

pub const ALICE: &str = "alice";
pub const BOB_MEMORY: &str = "bob_memory";
pub const BOB_COMM: &str = "bob_comm";
pub const CHARLIE_COMM: &str = "charlie_comm";
pub const CHARLIE_MEMORY: &str = "charlie_memory";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    SpinNoise(#[from] SpinNoiseError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("invalid protocol configuration: {0}")]
    InvalidConfig(String),
}

/// Reported outcome of a Bell-state measurement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BsmBits {
    pub comm: u8,
    pub memory: u8,
    /// Whether the repeated memory readouts agreed.
    pub consistent: bool,
}

impl BsmBits {
    fn all() -> impl Iterator<Item = BsmBits> {
        (0..8u8).map(|i| BsmBits {
            comm: i >> 2,
            memory: (i >> 1) & 1,
            consistent: i & 1 == 1,
        })
    }
}

/// Which reported outcomes let the sequence continue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptPolicy {
    /// Accepted communication-qubit outcomes, indexed by outcome.
    pub comm_outcomes: [bool; 2],
    pub require_consistent: bool,
    pub require_cr: bool,
}

impl AcceptPolicy {
    pub const CONDITIONAL: Self = Self {
        comm_outcomes: [true, false],
        require_consistent: true,
        require_cr: true,
    };
    pub const UNCONDITIONAL: Self = Self {
        comm_outcomes: [true, true],
        require_consistent: false,
        require_cr: false,
    };

    pub fn accepts(&self, bits: &BsmBits, cr_pass: bool) -> bool {
        self.comm_outcomes[bits.comm as usize]
            && (bits.consistent || !self.require_consistent)
            && (cr_pass || !self.require_cr)
    }

    /// Probability that an outcome with these bits is accepted, given the CR
    /// pass probability.
    fn weight(&self, bits: &BsmBits, cr_pass: f64) -> f64 {
        if !self.accepts(bits, true) {
            return 0.0;
        }
        if self.require_cr {
            cr_pass
        } else {
            1.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeleportMode {
    Conditional,
    Unconditional,
}

impl TeleportMode {
    pub fn charlie_policy(self) -> AcceptPolicy {
        match self {
            TeleportMode::Conditional => AcceptPolicy::CONDITIONAL,
            TeleportMode::Unconditional => AcceptPolicy::UNCONDITIONAL,
        }
    }
}

impl std::str::FromStr for TeleportMode {
    type Err = ProtocolError;
    fn from_str(s: &str) -> Result<Self, ProtocolError> {
        match s {
            "conditional" => Ok(Self::Conditional),
            "unconditional" => Ok(Self::Unconditional),
            other => Err(ProtocolError::InvalidConfig(format!(
                "unknown mode `{other}`"
            ))),
        }
    }
}

/// Node noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    pub bob_memory_depolarizing: f64,
    pub charlie_memory_depolarizing: f64,
    /// Decay of Bob's stored coherence with the attempts on the second link.
    pub bob_memory_dephasing: DecayFit,
    /// Adds the one-time Bloch-length loss of the memory fit on storage.
    pub storage_deficit: bool,
    /// Alice's communication qubit decays along `alice_fits` while she waits.
    pub alice_decoupling: bool,
    pub alice_fits: DecouplingFits,
    pub alice_depolarizing: f64,
    pub alice_ionization: f64,
    /// BAR readout of the memory bit of each BSM.
    pub bob_readout: ReadoutParams,
    pub charlie_readout: ReadoutParams,
    /// Assignment fidelities (|0⟩, |1⟩) of the communication bit of each BSM.
    pub bob_comm_readout: [f64; 2],
    pub charlie_comm_readout: [f64; 2],
    /// Two-qubit depolarizing probability of the local gates before each BSM.
    pub bsm_gate_depolarizing: f64,
    pub input_init_error: f64,
    pub input_mw_error: f64,
    /// Alice's assignment fidelities (|0⟩, |1⟩) used for tomography.
    pub alice_readout: [f64; 2],
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            bob_memory_depolarizing: 0.12,
            charlie_memory_depolarizing: 0.14,
            bob_memory_dephasing: DecayFit::new(1.0, 5300.0, 1.1, 0.0),
            storage_deficit: false,
            alice_decoupling: true,
            alice_fits: DecouplingFits::ALICE,
            alice_depolarizing: 0.0,
            alice_ionization: 0.007,
            bob_readout: ReadoutParams::BOB,
            charlie_readout: ReadoutParams::CHARLIE,
            bob_comm_readout: [0.93, 0.995],
            charlie_comm_readout: [0.92, 0.99],
            bsm_gate_depolarizing: 0.0,
            input_init_error: 1.2e-3,
            input_mw_error: 8e-3,
            alice_readout: [0.93, 0.995],
        }
    }
}

impl NoiseParams {
    /// Every imperfection switched off.
    pub fn noiseless() -> Self {
        Self {
            bob_memory_depolarizing: 0.0,
            charlie_memory_depolarizing: 0.0,
            bob_memory_dephasing: DecayFit::new(1.0, f64::MAX, 1.0, 0.0),
            storage_deficit: false,
            alice_decoupling: false,
            alice_fits: DecouplingFits::ALICE,
            alice_depolarizing: 0.0,
            alice_ionization: 0.0,
            bob_readout: ReadoutParams::PERFECT,
            charlie_readout: ReadoutParams::PERFECT,
            bob_comm_readout: [1.0, 1.0],
            charlie_comm_readout: [1.0, 1.0],
            bsm_gate_depolarizing: 0.0,
            input_init_error: 0.0,
            input_mw_error: 0.0,
            alice_readout: [1.0, 1.0],
        }
    }
}

/// Durations of the sequence elements, in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timing {
    pub attempt_period_s: f64,
    /// Fixed part of Alice's waiting time: gates, readouts, CR checks and
    /// classical communication after the second link is heralded.
    pub alice_fixed_wait_s: f64,
    /// Charge-resonance checks and optical phase stabilization before each try.
    pub start_overhead_s: f64,
    /// Bob's BSM, CR check and communication.
    pub bob_bsm_s: f64,
    /// Charlie's storage, input preparation, BSM and communication.
    pub charlie_bsm_s: f64,
    /// Phase stabilization between the two links.
    pub mid_stabilization_s: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            attempt_period_s: 3.8e-6,
            alice_fixed_wait_s: 10.0e-3,
            start_overhead_s: 0.71,
            bob_bsm_s: 1.0e-3,
            charlie_bsm_s: 1.0e-3,
            mid_stabilization_s: 350e-6,
        }
    }
}

impl Timing {
    fn validate(&self) -> Result<(), ProtocolError> {
        let all = [
            self.attempt_period_s,
            self.alice_fixed_wait_s,
            self.start_overhead_s,
            self.bob_bsm_s,
            self.charlie_bsm_s,
            self.mid_stabilization_s,
        ];
        if self.attempt_period_s <= 0.0 || all.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(ProtocolError::InvalidConfig(format!("timing {self:?}")));
        }
        Ok(())
    }

    /// Alice decouples from the first herald until Charlie's result arrives:
    /// the second link, Bob's rephasing of equal length, and fixed overheads.
    pub fn alice_wait_s(&self, q: u64) -> f64 {
        2.0 * q as f64 * self.attempt_period_s + self.alice_fixed_wait_s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub link_ab: LinkSpec,
    pub link_bc: LinkSpec,
    /// Link imperfections switched on; the protocol error is always present.
    pub link_error_sources: Vec<ErrorSource>,
    /// ZPL detection window applied to both links.
    pub detection_window_ns: f64,
    /// Both links take their visibility from this table at the detection
    /// window; with no points each link keeps its own.
    pub visibility_table: VisibilityTable,
    pub noise: NoiseParams,
    pub timing: Timing,
    /// Attempt limit of the Bob–Charlie link.
    pub timeout: u64,
    /// Attempt limit of the Alice–Bob link.
    pub first_link_cap: u64,
    pub bar_reps: usize,
    pub bob_policy: AcceptPolicy,
    pub bob_cr_pass: f64,
    pub charlie_cr_pass: f64,
    /// Alice applies the Pauli correction requested by Charlie.
    pub feedforward: bool,
    /// Memory phase picked up per attempt on the first and second link.
    pub phase_per_attempt_rad: [f64; 2],
    /// Charlie's SWAP stores the communication qubit's Z basis in the
    /// memory's X basis; Alice's correction includes the frame change.
    pub storage_basis_change: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            link_ab: LinkSpec::alice_bob(),
            link_bc: LinkSpec::bob_charlie(),
            link_error_sources: ErrorSource::ALL.to_vec(),
            detection_window_ns: 15.0,
            visibility_table: VisibilityTable::default(),
            noise: NoiseParams::default(),
            timing: Timing::default(),
            timeout: 1000,
            first_link_cap: 1_000_000,
            bar_reps: 2,
            bob_policy: AcceptPolicy::CONDITIONAL,
            bob_cr_pass: 1.0,
            charlie_cr_pass: 1.0,
            feedforward: true,
            phase_per_attempt_rad: [0.0, 0.0],
            storage_basis_change: true,
        }
    }
}

impl ProtocolConfig {
    /// Ideal components: emitters without double excitation, no dark counts,
    /// perfect visibility and phase, and no node noise. The links keep the
    /// single-click protocol error, and the imbalance between nodes of
    /// unequal brightness, unless `alpha` is lowered and balanced.
    pub fn noiseless() -> Self {
        let mut cfg = Self {
            noise: NoiseParams::noiseless(),
            ..Self::default()
        };
        cfg.clear_link_noise();
        cfg
    }

    /// Removes every link imperfection except the single-click protocol error.
    pub fn clear_link_noise(&mut self) {
        self.link_error_sources.clear();
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.timeout < 1 || self.first_link_cap < 1 {
            return Err(ProtocolError::InvalidConfig(
                "timeout and first-link cap must be at least 1".into(),
            ));
        }
        if self.bar_reps < 1 {
            return Err(ProtocolError::InvalidConfig(
                "at least one memory readout is needed".into(),
            ));
        }
        if !(self.detection_window_ns > 0.0) {
            return Err(ProtocolError::InvalidConfig(format!(
                "detection window {}",
                self.detection_window_ns
            )));
        }
        let probs = [
            self.bob_cr_pass,
            self.charlie_cr_pass,
            self.noise.alice_ionization,
            self.noise.alice_depolarizing,
            self.noise.bsm_gate_depolarizing,
            self.noise.alice_readout[0],
            self.noise.alice_readout[1],
            self.noise.bob_comm_readout[0],
            self.noise.bob_comm_readout[1],
            self.noise.charlie_comm_readout[0],
            self.noise.charlie_comm_readout[1],
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ProtocolError::InvalidConfig(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        for (who, readout) in [
            ("Alice", self.noise.alice_readout),
            ("Bob", self.noise.bob_comm_readout),
            ("Charlie", self.noise.charlie_comm_readout),
        ] {
            if readout[0] + readout[1] <= 1.0 {
                return Err(ProtocolError::InvalidConfig(format!(
                    "{who}'s readout carries no information"
                )));
            }
        }
        self.noise.bob_readout.validate()?;
        self.noise.charlie_readout.validate()?;
        self.noise.bob_memory_dephasing.validate()?;
        self.timing.validate()
    }

    fn effective_link(&self, base: &LinkSpec) -> Result<LinkSpec, ProtocolError> {
        let mut spec = base.clone();
        spec.zpl_window_ns = self.detection_window_ns;
        if !self.visibility_table.points.is_empty() {
            spec.visibility = self.visibility_table.at(self.detection_window_ns)?;
        }
        Ok(spec)
    }

    /// The two link specifications with the protocol-level window applied.
    pub fn link_specs(&self) -> Result<[LinkSpec; 2], ProtocolError> {
        Ok([
            self.effective_link(&self.link_ab)?,
            self.effective_link(&self.link_bc)?,
        ])
    }

    pub fn set_psb_rejection(&mut self, on: bool) {
        self.link_ab.psb_rejection = on;
        self.link_bc.psb_rejection = on;
    }
}

/// Attempts until the first herald, or `None` on reaching `cap`.
pub fn generate_link<R: Rng + ?Sized>(
    success_probability: f64,
    cap: u64,
    rng: &mut R,
) -> Option<u64> {
    assert!(cap >= 1, "attempt cap must be at least 1");
    if success_probability <= 0.0 {
        return None;
    }
    if success_probability >= 1.0 {
        return Some(1);
    }
    let failures = Geometric::new(success_probability)
        .expect("probability in (0, 1)")
        .sample(rng);
    let n = failures.saturating_add(1);
    (n <= cap).then_some(n)
}

/// Samples the link attempt count and which herald fired.
pub fn sample_herald<'a, R: Rng + ?Sized>(
    link: &'a HeraldedLink,
    cap: u64,
    rng: &mut R,
) -> Option<(u64, &'a crate::photonic::Herald)> {
    let n = generate_link(link.success_probability(), cap, rng)?;
    let u = rng.random::<f64>() * link.success_probability();
    let herald = if u < link.heralds[0].probability {
        &link.heralds[0]
    } else {
        &link.heralds[1]
    };
    Some((n, herald))
}

/// Z rotation that removes the memory phase picked up over `n` attempts.
pub fn phase_correction(n: u64, phase_per_attempt: f64) -> Matrix {
    gates::rotation([0.0, 0.0, 1.0], -(n as f64) * phase_per_attempt)
}

/// Z rotation the memory picks up over `n` attempts.
pub fn phase_pickup(n: u64, phase_per_attempt: f64) -> Matrix {
    gates::rotation([0.0, 0.0, 1.0], n as f64 * phase_per_attempt)
}

/// Compensation of the phase imprinted while rephasing for `q` attempts.
pub fn rephase_correction(q: u64, phase_per_attempt: f64) -> Matrix {
    phase_correction(q, phase_per_attempt)
}

fn relabel(state: &State, labels: &[&str]) -> Result<State, ProtocolError> {
    Ok(State::new(labels, state.dims(), state.matrix().clone())?)
}

fn projector(bit: u8) -> Matrix {
    Matrix::diagonal(&[f64::from(1 - bit), f64::from(bit)])
}

fn sign_index(sign: i8) -> usize {
    usize::from(sign < 0)
}

/// Readout model of a Bell-state measurement on (memory, comm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BsmReadout {
    /// Assignment fidelities (|0⟩, |1⟩) of the communication-qubit bit.
    pub comm: [f64; 2],
    /// BAR readout of the memory bit.
    pub memory: ReadoutParams,
    pub reps: usize,
    pub gate_depolarizing: f64,
}

impl BsmReadout {
    pub const IDEAL: Self = Self {
        comm: [1.0, 1.0],
        memory: ReadoutParams::PERFECT,
        reps: 1,
        gate_depolarizing: 0.0,
    };

    /// P(reported bits | true comm `c`, true memory `m`) for all eight reports.
    pub fn report_probabilities(&self) -> Result<[[[f64; 8]; 2]; 2], ProtocolError> {
        let bar = bar_outcome_probabilities(&self.memory, self.reps)?;
        let mut out = [[[0.0; 8]; 2]; 2];
        for c in 0..2 {
            for m in 0..2 {
                for (k, bits) in BsmBits::all().enumerate() {
                    let pc = if usize::from(bits.comm) == c {
                        self.comm[c]
                    } else {
                        1.0 - self.comm[c]
                    };
                    out[c][m][k] = pc * bar[m][bits.memory as usize][bits.consistent as usize];
                }
            }
        }
        Ok(out)
    }
}

/// Local Bell-state measurement circuit: CNOT from memory to comm, then H on
/// the memory. Returns the unnormalized post-measurement states indexed by
/// true (comm, memory) bits, with both measured qubits traced out.
fn bsm_branches(
    state: &State,
    memory: &str,
    comm: &str,
    gate_depolarizing: f64,
) -> Result<[[State; 2]; 2], ProtocolError> {
    let mut rho = state.clone();
    if gate_depolarizing > 0.0 {
        rho = rho.apply_channel(
            &Channel::depolarizing(gate_depolarizing, 2)?,
            &[memory, comm],
        )?;
    }
    rho = rho
        .apply_unitary(&gates::cnot(), &[memory, comm])?
        .apply_unitary(&gates::hadamard(), &[memory])?;
    let keep: Vec<String> = rho
        .labels()
        .iter()
        .filter(|l| *l != memory && *l != comm)
        .cloned()
        .collect();
    let keep: Vec<&str> = keep.iter().map(String::as_str).collect();
    let branch = |c: u8, m: u8| -> Result<State, ProtocolError> {
        Ok(rho
            .apply_operator(&projector(c), &[comm])?
            .apply_operator(&projector(m), &[memory])?
            .partial_trace(&keep)?)
    };
    Ok([
        [branch(0, 0)?, branch(0, 1)?],
        [branch(1, 0)?, branch(1, 1)?],
    ])
}

/// Pauli lookup tables of the two feed-forward steps, derived from the ideal
/// circuit.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    /// Charlie's Pauli index per [AB sign][BC sign][comm][memory] of Bob's BSM.
    pub charlie: [[[[usize; 2]; 2]; 2]; 2],
    /// Alice's Pauli index per [comm][memory] of Charlie's BSM. Alice applies
    /// the Pauli followed by the storage frame change.
    pub alice: [[usize; 2]; 2],
}

/// Basis change of Charlie's compiled SWAP: Hadamard when the memory stores
/// the communication qubit's Z basis in its X basis.
fn storage_frame(basis_change: bool) -> Matrix {
    if basis_change {
        gates::hadamard()
    } else {
        Matrix::identity(2)
    }
}

/// Alice's correction for Pauli index `k`.
fn alice_correction(k: usize, basis_change: bool) -> Matrix {
    &storage_frame(basis_change) * &gates::pauli(k)
}

fn find_pauli(
    mut unit_fidelity: impl FnMut(usize) -> Result<f64, ProtocolError>,
) -> Result<usize, ProtocolError> {
    for k in 0..4 {
        if (unit_fidelity(k)? - 1.0).abs() < 1e-9 {
            return Ok(k);
        }
    }
    Err(ProtocolError::InvalidConfig(
        "no Pauli correction restores the ideal state".into(),
    ))
}

impl FeedForward {
    pub fn get(basis_change: bool) -> &'static FeedForward {
        static PLAIN: OnceLock<FeedForward> = OnceLock::new();
        static ROTATED: OnceLock<FeedForward> = OnceLock::new();
        let cell = if basis_change { &ROTATED } else { &PLAIN };
        cell.get_or_init(|| Self::derive(basis_change).expect("ideal feed-forward tables"))
    }

    fn derive(basis_change: bool) -> Result<Self, ProtocolError> {
        let mut charlie = [[[[0; 2]; 2]; 2]; 2];
        let target = Ket::phi_plus(ALICE, CHARLIE_COMM);
        for (i1, s1) in [1.0, -1.0].into_iter().enumerate() {
            for (i2, s2) in [1.0, -1.0].into_iter().enumerate() {
                let joint = Ket::psi(ALICE, BOB_MEMORY, s1)
                    .tensor(&Ket::psi(BOB_COMM, CHARLIE_COMM, s2))?
                    .to_state();
                let branches = bsm_branches(&joint, BOB_MEMORY, BOB_COMM, 0.0)?;
                for c in 0..2 {
                    for m in 0..2 {
                        let rho = branches[c][m].normalized();
                        charlie[i1][i2][c][m] = find_pauli(|k| {
                            Ok(rho
                                .apply_unitary(&gates::pauli(k), &[CHARLIE_COMM])?
                                .fidelity(&target)?)
                        })?;
                    }
                }
            }
        }
        let mut alice = [[0; 2]; 2];
        let teleporter = Ket::phi_plus(ALICE, CHARLIE_MEMORY)
            .to_state()
            .apply_unitary(&storage_frame(basis_change), &[CHARLIE_MEMORY])?;
        for c in 0..2 {
            for m in 0..2 {
                alice[c][m] = find_pauli(|k| {
                    let mut total = 0.0;
                    for input in [Cardinal::PlusX, Cardinal::PlusY, Cardinal::PlusZ] {
                        let joint = teleporter.tensor(&input.ket(CHARLIE_COMM).to_state())?;
                        let out = bsm_branches(&joint, CHARLIE_MEMORY, CHARLIE_COMM, 0.0)?[c][m]
                            .normalized();
                        total += out
                            .apply_unitary(&alice_correction(k, basis_change), &[ALICE])?
                            .fidelity(&input.ket(ALICE))?;
                    }
                    Ok(total / 3.0)
                })?;
            }
        }
        Ok(Self { charlie, alice })
    }
}

/// One reported outcome of Bob's BSM and the resulting Alice–Charlie state.
#[derive(Clone, Debug)]
pub struct SwapOutcome {
    pub bits: BsmBits,
    pub probability: f64,
    /// Normalized state on (`ALICE`, `CHARLIE_COMM`) after Charlie's correction.
    pub state: State,
}

fn unnormalized_swap(
    rho_ab: &State,
    rho_bc: &State,
    signs: [i8; 2],
    readout: &BsmReadout,
) -> Result<Vec<(BsmBits, State)>, ProtocolError> {
    let ab = relabel(rho_ab, &[ALICE, BOB_MEMORY])?;
    let bc = relabel(rho_bc, &[BOB_COMM, CHARLIE_COMM])?;
    let branches = bsm_branches(
        &ab.tensor(&bc)?,
        BOB_MEMORY,
        BOB_COMM,
        readout.gate_depolarizing,
    )?;
    let reports = readout.report_probabilities()?;
    let table = &FeedForward::get(false).charlie[sign_index(signs[0])][sign_index(signs[1])];
    let mut out = Vec::with_capacity(8);
    for (k, bits) in BsmBits::all().enumerate() {
        let pauli = gates::pauli(table[bits.comm as usize][bits.memory as usize]);
        let mut acc: Option<State> = None;
        for c in 0..2 {
            for m in 0..2 {
                let w = reports[c][m][k];
                if w == 0.0 {
                    continue;
                }
                let term = branches[c][m]
                    .apply_unitary(&pauli, &[CHARLIE_COMM])?
                    .scaled(w);
                acc = Some(match acc {
                    Some(a) => a.add(&term)?,
                    None => term,
                });
            }
        }
        let state = match acc {
            Some(s) => s,
            None => branches[0][0].scaled(0.0),
        };
        out.push((bits, state));
    }
    Ok(out)
}

/// Entanglement swapping on Bob. `rho_ab` holds (Alice, Bob) and `rho_bc`
/// holds (Bob, Charlie); `signs` are the herald signs of the two links.
/// Returns one entry per reported outcome with nonzero probability.
pub fn entanglement_swap(
    rho_ab: &State,
    rho_bc: &State,
    signs: [i8; 2],
    readout: &BsmReadout,
) -> Result<Vec<SwapOutcome>, ProtocolError> {
    if rho_ab.dims() != [2, 2] || rho_bc.dims() != [2, 2] {
        return Err(HilbertError::DimensionMismatch {
            expected: 4,
            found: rho_ab.dim().max(rho_bc.dim()),
        }
        .into());
    }
    Ok(unnormalized_swap(rho_ab, rho_bc, signs, readout)?
        .into_iter()
        .filter_map(|(bits, s)| {
            let p = s.trace();
            (p > 1e-15).then(|| SwapOutcome {
                bits,
                probability: p,
                state: s.normalized(),
            })
        })
        .collect())
}

/// Why a shot stopped before teleporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbortReason {
    FirstLinkCap,
    Timeout,
    BobRejected,
    CharlieRejected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeId {
    Alice,
    Bob,
    Charlie,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    HeraldSign(i8),
    Bsm(BsmBits),
    CrResult(bool),
    Abort(AbortReason),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalMessage {
    pub sender: NodeId,
    pub receiver: NodeId,
    /// Sequence number within the sender-receiver pair.
    pub seq: u64,
    pub payload: Payload,
}

/// In-order classical channels between node pairs.
#[derive(Clone, Debug, Default)]
pub struct MessageQueue {
    channels: BTreeMap<(NodeId, NodeId), VecDeque<ClassicalMessage>>,
    sent: BTreeMap<(NodeId, NodeId), u64>,
    received: BTreeMap<(NodeId, NodeId), u64>,
    log: Vec<ClassicalMessage>,
}

impl MessageQueue {
    pub fn send(&mut self, sender: NodeId, receiver: NodeId, payload: Payload) {
        let seq = self.sent.entry((sender, receiver)).or_insert(0);
        let msg = ClassicalMessage {
            sender,
            receiver,
            seq: *seq,
            payload,
        };
        *seq += 1;
        self.log.push(msg.clone());
        self.channels
            .entry((sender, receiver))
            .or_default()
            .push_back(msg);
    }

    /// Next message from `sender` to `receiver`, if one is waiting.
    pub fn receive(&mut self, sender: NodeId, receiver: NodeId) -> Option<ClassicalMessage> {
        let msg = self.channels.get_mut(&(sender, receiver))?.pop_front()?;
        let expected = self.received.entry((sender, receiver)).or_insert(0);
        assert_eq!(
            msg.seq, *expected,
            "message from {sender:?} to {receiver:?} delivered out of order"
        );
        *expected += 1;
        Some(msg)
    }

    /// Every message sent so far, in sending order.
    pub fn log(&self) -> &[ClassicalMessage] {
        &self.log
    }
}

#[derive(Clone, Debug)]
pub struct TeleportOutcome {
    pub input: Cardinal,
    pub mode: TeleportMode,
    /// Alice's state after correction and noise. In analytic mode this is the
    /// average over accepted runs; in a shot it is the state of that run.
    pub output: Option<State>,
    /// Analytic mode: probability that a started try teleports.
    pub accept_probability: Option<f64>,
    /// Sampled tomography result: measurement direction (+1 along the input
    /// axis, −1 against it) and the assigned bit.
    pub tomography: Option<(i8, u8)>,
    pub bob_bits: Option<BsmBits>,
    pub charlie_bits: Option<BsmBits>,
    pub herald_signs: [Option<i8>; 2],
    pub attempts_ab: u64,
    pub attempts_bc: u64,
    pub abort: Option<AbortReason>,
    pub ionized: bool,
    /// Estimated duration of the try in seconds.
    pub wall_time_s: f64,
    pub messages: Vec<ClassicalMessage>,
}

impl TeleportOutcome {
    fn empty(input: Cardinal, mode: TeleportMode) -> Self {
        Self {
            input,
            mode,
            output: None,
            accept_probability: None,
            tomography: None,
            bob_bits: None,
            charlie_bits: None,
            herald_signs: [None, None],
            attempts_ab: 0,
            attempts_bc: 0,
            abort: None,
            ionized: false,
            wall_time_s: 0.0,
            messages: Vec::new(),
        }
    }

    /// Fidelity of the output to the input state.
    pub fn fidelity(&self) -> Option<f64> {
        let out = self.output.as_ref()?;
        out.fidelity(&self.input.ket(ALICE)).ok()
    }
}

/// Which of Charlie's reported outcomes enter an average.
#[derive(Clone, Copy, Debug)]
enum Selection {
    Policy(AcceptPolicy),
    Bits(BsmBits),
}

/// Precomputed links, feed-forward and attempt statistics for one config.
#[derive(Clone, Debug)]
pub struct Teleportation {
    cfg: ProtocolConfig,
    links: [HeraldedLink; 2],
    bob: BsmReadout,
    charlie: BsmReadout,
    /// P(second link heralds within the timeout).
    bc_success: f64,
    /// Unnormalized Bob-accepted swapped state on (`ALICE`, `CHARLIE_COMM`)
    /// after Charlie's correction and before storage, without and with a
    /// phase flip of Bob's memory, each already weighted by the flip
    /// probability averaged over the attempt distribution.
    teleporter: [State; 2],
    /// Coefficients of Alice's Pauli noise [flip branch][I, X, Y, Z].
    alice_pauli: [[f64; 4]; 2],
    /// Mean attempts on the second link given success.
    mean_q: f64,
}

impl Teleportation {
    pub fn new(cfg: &ProtocolConfig) -> Result<Self, ProtocolError> {
        cfg.validate()?;
        let [ab, bc] = cfg.link_specs()?;
        let links = [
            herald_link(&ab.build_with(&cfg.link_error_sources)?)?,
            herald_link(&bc.build_with(&cfg.link_error_sources)?)?,
        ];
        let bob = BsmReadout {
            comm: cfg.noise.bob_comm_readout,
            memory: cfg.noise.bob_readout,
            reps: cfg.bar_reps,
            gate_depolarizing: cfg.noise.bsm_gate_depolarizing,
        };
        let charlie = BsmReadout {
            comm: cfg.noise.charlie_comm_readout,
            memory: cfg.noise.charlie_readout,
            reps: cfg.bar_reps,
            gate_depolarizing: cfg.noise.bsm_gate_depolarizing,
        };

        let p = links[1].success_probability();
        let bc_success = 1.0 - (1.0 - p).powf(cfg.timeout as f64);
        let mut flip_weight = [0.0; 2];
        let mut alice_pauli = [[0.0; 4]; 2];
        let mut mean_q = 0.0;
        if bc_success > 0.0 {
            for q in 1..=cfg.timeout {
                let w = p * (1.0 - p).powf((q - 1) as f64) / bc_success;
                let flip = (1.0 - cfg.noise.bob_memory_dephasing.decay(q as f64)) / 2.0;
                let mu = if cfg.noise.alice_decoupling {
                    let [px, py, pz] = decoupling_pauli_probabilities(
                        cfg.timing.alice_wait_s(q),
                        &cfg.noise.alice_fits,
                    )?;
                    [1.0 - px - py - pz, px, py, pz]
                } else {
                    [1.0, 0.0, 0.0, 0.0]
                };
                for (k, branch_w) in [(0, 1.0 - flip), (1, flip)] {
                    flip_weight[k] += w * branch_w;
                    for (j, m) in mu.iter().enumerate() {
                        alice_pauli[k][j] += w * branch_w * m;
                    }
                }
                mean_q += w * q as f64;
            }
        }
        // Alice's Pauli coefficients are stored relative to the flip weight so
        // the teleporter branches can carry that weight themselves.
        for k in 0..2 {
            if flip_weight[k] > 0.0 {
                for j in 0..4 {
                    alice_pauli[k][j] /= flip_weight[k];
                }
            }
        }

        let mut this = Self {
            cfg: cfg.clone(),
            links,
            bob,
            charlie,
            bc_success,
            teleporter: [
                State::maximally_mixed(ALICE, 2),
                State::maximally_mixed(ALICE, 2),
            ],
            alice_pauli,
            mean_q,
        };
        let base = this.bob_accepted_teleporter(false)?;
        let flipped = this.bob_accepted_teleporter(true)?;
        this.teleporter = [base.scaled(flip_weight[0]), flipped.scaled(flip_weight[1])];
        Ok(this)
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.cfg
    }

    pub fn links(&self) -> &[HeraldedLink; 2] {
        &self.links
    }

    /// P(the second link heralds within the timeout).
    pub fn second_link_success(&self) -> f64 {
        self.bc_success
    }

    /// Mean number of second-link attempts of successful tries.
    pub fn mean_second_link_attempts(&self) -> f64 {
        self.mean_q
    }

    fn storage_noise(&self, rho: &State) -> Result<State, ProtocolError> {
        let mut out = rho.apply_channel(
            &depolarizing(self.cfg.noise.bob_memory_depolarizing)?,
            &[BOB_MEMORY],
        )?;
        if self.cfg.noise.storage_deficit {
            out = out.apply_channel(&storage_channel(&MEMORY_WITH_DECOUPLING)?, &[BOB_MEMORY])?;
        }
        Ok(out)
    }

    /// Charlie's swap of the corrected comm qubit into memory plus its noise.
    fn charlie_store(&self, rho_ac: &State) -> Result<State, ProtocolError> {
        let mut stored = relabel(rho_ac, &[ALICE, CHARLIE_MEMORY])?;
        if self.cfg.storage_basis_change {
            stored = stored.apply_unitary(&gates::hadamard(), &[CHARLIE_MEMORY])?;
        }
        Ok(stored.apply_channel(
            &depolarizing(self.cfg.noise.charlie_memory_depolarizing)?,
            &[CHARLIE_MEMORY],
        )?)
    }

    fn sign_weights(link: &HeraldedLink) -> [(i8, f64); 2] {
        let p = link.success_probability();
        [
            (link.heralds[0].sign, link.heralds[0].probability / p),
            (link.heralds[1].sign, link.heralds[1].probability / p),
        ]
    }

    /// Σ over herald signs and Bob's accepted outcomes of the unnormalized
    /// swapped state, for a given (fixed) phase flip of Bob's memory.
    fn bob_accepted_teleporter(&self, memory_flip: bool) -> Result<State, ProtocolError> {
        let mut acc = State::new(&[ALICE, CHARLIE_COMM], &[2, 2], Matrix::zeros(4, 4))?;
        for (h_ab, (s1, w1)) in self.links[0]
            .heralds
            .iter()
            .zip(Self::sign_weights(&self.links[0]))
        {
            let mut ab = self.storage_noise(&relabel(&h_ab.state, &[ALICE, BOB_MEMORY])?)?;
            if memory_flip {
                ab = ab.apply_unitary(&gates::pauli_z(), &[BOB_MEMORY])?;
            }
            for (h_bc, (s2, w2)) in self.links[1]
                .heralds
                .iter()
                .zip(Self::sign_weights(&self.links[1]))
            {
                let bc = relabel(&h_bc.state, &[BOB_COMM, CHARLIE_COMM])?;
                for (bits, rho) in unnormalized_swap(&ab, &bc, [s1, s2], &self.bob)? {
                    let w = self.cfg.bob_policy.weight(&bits, self.cfg.bob_cr_pass) * w1 * w2;
                    if w > 0.0 {
                        acc = acc.add(&relabel(&rho, &[ALICE, CHARLIE_COMM])?.scaled(w))?;
                    }
                }
            }
        }
        Ok(acc)
    }

    /// P(Bob accepts) for a try whose second link succeeded.
    pub fn bob_accept_probability(&self) -> f64 {
        self.teleporter[0].trace() + self.teleporter[1].trace()
    }

    /// Normalized Alice–Charlie state after Bob's swap and Charlie's
    /// correction, before Charlie stores it.
    pub fn teleporter_state(&self) -> Result<State, ProtocolError> {
        Ok(self.teleporter[0].add(&self.teleporter[1])?.normalized())
    }

    /// Bell fidelity of [`Self::teleporter_state`].
    pub fn teleporter_fidelity(&self) -> Result<f64, ProtocolError> {
        Ok(self
            .teleporter_state()?
            .fidelity(&Ket::phi_plus(ALICE, CHARLIE_COMM))?)
    }

    /// Bell fidelity of the teleporter once stored in Charlie's memory, with
    /// the storage frame undone.
    pub fn stored_teleporter_fidelity(&self) -> Result<f64, ProtocolError> {
        let mut stored = self.charlie_store(&self.teleporter_state()?)?;
        if self.cfg.storage_basis_change {
            stored = stored.apply_unitary(&gates::hadamard(), &[CHARLIE_MEMORY])?;
        }
        Ok(stored.fidelity(&Ket::phi_plus(ALICE, CHARLIE_MEMORY))?)
    }

    /// Alice's waiting noise for flip branch `k`.
    fn alice_channel(&self, k: usize) -> Result<Channel, ProtocolError> {
        let [_, px, py, pz] = self.alice_pauli[k];
        let noise = &self.cfg.noise;
        Ok(Channel::pauli(px, py, pz)?
            .then(&depolarizing(noise.alice_depolarizing)?)?
            .then(&depolarizing(noise.alice_ionization)?)?)
    }

    /// Unnormalized corrected Alice states per Charlie report.
    fn charlie_outcomes(
        &self,
        k: usize,
        input: &State,
        feedforward: bool,
    ) -> Result<Vec<(BsmBits, State)>, ProtocolError> {
        let joint = self.charlie_store(&self.teleporter[k])?.tensor(input)?;
        let mut branches = bsm_branches(
            &joint,
            CHARLIE_MEMORY,
            CHARLIE_COMM,
            self.charlie.gate_depolarizing,
        )?;
        let alice = self.alice_channel(k)?;
        for branch in branches.iter_mut().flatten() {
            *branch = branch.apply_channel(&alice, &[ALICE])?;
        }
        let reports = self.charlie.report_probabilities()?;
        let table = &FeedForward::get(self.cfg.storage_basis_change).alice;
        let mut out = Vec::with_capacity(8);
        for (i, bits) in BsmBits::all().enumerate() {
            let correction = if feedforward {
                alice_correction(
                    table[bits.comm as usize][bits.memory as usize],
                    self.cfg.storage_basis_change,
                )
            } else {
                Matrix::identity(2)
            };
            let mut acc = branches[0][0].scaled(0.0);
            for c in 0..2 {
                for m in 0..2 {
                    let w = reports[c][m][i];
                    if w > 0.0 {
                        acc = acc.add(&branches[c][m].scaled(w))?;
                    }
                }
            }
            out.push((bits, acc.apply_unitary(&correction, &[ALICE])?));
        }
        Ok(out)
    }

    fn input_state(&self, input: Cardinal) -> Result<State, ProtocolError> {
        Ok(prepare_input_state(
            input,
            CHARLIE_COMM,
            self.cfg.noise.input_init_error,
            self.cfg.noise.input_mw_error,
        )?)
    }

    /// Unnormalized output for the selected Charlie outcomes.
    fn selected_output(
        &self,
        input: Cardinal,
        selection: Selection,
        feedforward: bool,
    ) -> Result<State, ProtocolError> {
        self.selected_output_for(&self.input_state(input)?, selection, feedforward)
    }

    fn selected_output_for(
        &self,
        input_state: &State,
        selection: Selection,
        feedforward: bool,
    ) -> Result<State, ProtocolError> {
        let input_state = &relabel(input_state, &[CHARLIE_COMM])?;
        let mut total = State::new(&[ALICE], &[2], Matrix::zeros(2, 2))?;
        for k in 0..2 {
            for (bits, rho) in self.charlie_outcomes(k, input_state, feedforward)? {
                let w = match selection {
                    Selection::Policy(policy) => policy.weight(&bits, self.cfg.charlie_cr_pass),
                    Selection::Bits(b) => f64::from(u8::from(b == bits)),
                };
                if w > 0.0 {
                    total = total.add(&rho.scaled(w))?;
                }
            }
        }
        Ok(total)
    }

    /// Exact average over everything random in an accepted try.
    pub fn analytic(
        &self,
        input: Cardinal,
        mode: TeleportMode,
    ) -> Result<TeleportOutcome, ProtocolError> {
        let out = self.selected_output(
            input,
            Selection::Policy(mode.charlie_policy()),
            self.cfg.feedforward,
        )?;
        let accepted = out.trace();
        let mut outcome = TeleportOutcome::empty(input, mode);
        outcome.accept_probability = Some(self.bc_success * accepted);
        outcome.attempts_bc = self.mean_q.round() as u64;
        if accepted > 0.0 {
            outcome.output = Some(out.normalized());
        } else {
            outcome.abort = Some(AbortReason::BobRejected);
        }
        Ok(outcome)
    }

    /// Analytic teleportation of an arbitrary single-qubit state prepared on
    /// Charlie without preparation error. Returns Alice's normalized output
    /// and the acceptance probability of a started try.
    pub fn teleport_state(
        &self,
        input: &State,
        mode: TeleportMode,
    ) -> Result<(State, f64), ProtocolError> {
        if input.dims() != [2] {
            return Err(HilbertError::WrongDimension {
                expected: 2,
                found: input.dim(),
            }
            .into());
        }
        let out = self.selected_output_for(
            input,
            Selection::Policy(mode.charlie_policy()),
            self.cfg.feedforward,
        )?;
        let accepted = out.trace();
        if accepted <= 0.0 {
            return Err(ProtocolError::InvalidConfig("no accepted outcome".into()));
        }
        Ok((out.normalized(), self.bc_success * accepted))
    }

    /// P(Charlie accepts | Bob accepted), averaged over the six inputs.
    pub fn charlie_accept_probability(&self, mode: TeleportMode) -> Result<f64, ProtocolError> {
        let bob = self.bob_accept_probability();
        if bob <= 0.0 {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for input in Cardinal::ALL {
            total += self
                .selected_output(
                    input,
                    Selection::Policy(mode.charlie_policy()),
                    self.cfg.feedforward,
                )?
                .trace();
        }
        Ok((total / 6.0 / bob).min(1.0))
    }

    /// Six-state average fidelity in analytic mode.
    pub fn average_fidelity(&self, mode: TeleportMode) -> Result<f64, ProtocolError> {
        let mut total = 0.0;
        for input in Cardinal::ALL {
            total += self
                .analytic(input, mode)?
                .fidelity()
                .ok_or_else(|| ProtocolError::InvalidConfig("no accepted outcome".into()))?;
        }
        Ok(total / 6.0)
    }

    /// Per-input fidelities in analytic mode, in [`Cardinal::ALL`] order.
    pub fn state_fidelities(&self, mode: TeleportMode) -> Result<[f64; 6], ProtocolError> {
        let mut out = [0.0; 6];
        for (slot, input) in out.iter_mut().zip(Cardinal::ALL) {
            *slot = self.analytic(input, mode)?.fidelity().unwrap_or(f64::NAN);
        }
        Ok(out)
    }

    /// Six-state average for one reported (memory, comm) outcome of Charlie,
    /// keeping only consistent memory patterns and ignoring the CR check.
    fn outcome_average(
        &self,
        comm: u8,
        memory: u8,
        feedforward: bool,
    ) -> Result<(f64, f64), ProtocolError> {
        let bits = BsmBits {
            comm,
            memory,
            consistent: true,
        };
        let mut fid = 0.0;
        let mut prob = 0.0;
        for input in Cardinal::ALL {
            let out = self.selected_output(input, Selection::Bits(bits), feedforward)?;
            prob += out.trace() / 6.0;
            fid += out.fidelity(&input.ket(ALICE))? / 6.0;
        }
        Ok((fid, prob))
    }

    /// Six-state average fidelity per Charlie outcome, indexed [memory][comm].
    pub fn per_bsm_outcome_fidelity(&self) -> Result<[[f64; 2]; 2], ProtocolError> {
        let mut out = [[0.0; 2]; 2];
        for memory in 0..2u8 {
            for comm in 0..2u8 {
                let (f, p) = self.outcome_average(comm, memory, true)?;
                out[memory as usize][comm as usize] = f / p;
            }
        }
        Ok(out)
    }

    /// Six-state average with Alice's correction left out, over all four
    /// outcomes with the same accounting as [`Self::per_bsm_outcome_fidelity`].
    pub fn no_feedforward_fidelity(&self) -> Result<f64, ProtocolError> {
        let mut fid = 0.0;
        let mut prob = 0.0;
        for memory in 0..2u8 {
            for comm in 0..2u8 {
                let (f, p) = self.outcome_average(comm, memory, false)?;
                fid += f;
                prob += p;
            }
        }
        Ok(fid / prob)
    }

    fn shot_duration(&self, n: u64, q: u64, stage: u8) -> f64 {
        let t = &self.cfg.timing;
        let mut d = t.start_overhead_s + n as f64 * t.attempt_period_s;
        if stage >= 1 {
            d += t.mid_stabilization_s + q as f64 * t.attempt_period_s;
        }
        if stage >= 2 {
            d += q as f64 * t.attempt_period_s + t.bob_bsm_s;
        }
        if stage >= 3 {
            d += t.charlie_bsm_s;
        }
        d
    }

    /// One sampled try of the full sequence.
    pub fn shot<R: Rng + ?Sized>(
        &self,
        input: Cardinal,
        mode: TeleportMode,
        rng: &mut R,
    ) -> Result<TeleportOutcome, ProtocolError> {
        let cfg = &self.cfg;
        let mut out = TeleportOutcome::empty(input, mode);
        let mut queue = MessageQueue::default();

        // Alice–Bob link, stored on Bob's memory.
        let Some((n, h_ab)) = sample_herald(&self.links[0], cfg.first_link_cap, rng) else {
            out.attempts_ab = cfg.first_link_cap;
            out.abort = Some(AbortReason::FirstLinkCap);
            out.wall_time_s = self.shot_duration(cfg.first_link_cap, 0, 0);
            return Ok(out);
        };
        out.attempts_ab = n;
        out.herald_signs[0] = Some(h_ab.sign);
        queue.send(NodeId::Bob, NodeId::Charlie, Payload::HeraldSign(h_ab.sign));
        let mut rho = self.storage_noise(&relabel(&h_ab.state, &[ALICE, BOB_MEMORY])?)?;
        let [phi_a, phi_b] = cfg.phase_per_attempt_rad;
        rho = rho.apply_unitary(&phase_pickup(n, phi_a), &[BOB_MEMORY])?;
        rho = rho.apply_unitary(&phase_correction(n, phi_a), &[BOB_MEMORY])?;

        // Bob–Charlie link under the timeout.
        let Some((q, h_bc)) = sample_herald(&self.links[1], cfg.timeout, rng) else {
            out.attempts_bc = cfg.timeout;
            out.abort = Some(AbortReason::Timeout);
            out.wall_time_s = self.shot_duration(n, cfg.timeout, 1);
            return Ok(out);
        };
        out.attempts_bc = q;
        out.herald_signs[1] = Some(h_bc.sign);
        rho = rho.tensor(&relabel(&h_bc.state, &[BOB_COMM, CHARLIE_COMM])?)?;
        rho = rho.apply_channel(
            &memory_dephasing_channel(q, &cfg.noise.bob_memory_dephasing)?,
            &[BOB_MEMORY],
        )?;
        rho = rho.apply_unitary(&phase_pickup(q, phi_b), &[BOB_MEMORY])?;
        rho = rho.apply_unitary(&rephase_correction(q, phi_b), &[BOB_MEMORY])?;

        // Bob's BSM.
        let (bob_bits, rho_ac) = self.sample_bsm(&rho, BOB_MEMORY, BOB_COMM, &self.bob, rng)?;
        let bob_cr = rng.random::<f64>() < cfg.bob_cr_pass;
        out.bob_bits = Some(bob_bits);
        out.wall_time_s = self.shot_duration(n, q, 2);
        if !cfg.bob_policy.accepts(&bob_bits, bob_cr) {
            queue.send(
                NodeId::Bob,
                NodeId::Charlie,
                Payload::Abort(AbortReason::BobRejected),
            );
            out.abort = Some(AbortReason::BobRejected);
            out.messages = queue.log().to_vec();
            return Ok(out);
        }
        queue.send(NodeId::Bob, NodeId::Charlie, Payload::Bsm(bob_bits));
        queue.send(NodeId::Bob, NodeId::Charlie, Payload::CrResult(bob_cr));

        // Charlie: feed-forward from Bob's messages, then storage.
        let mut sign_ab = None;
        let mut received_bits = None;
        while let Some(msg) = queue.receive(NodeId::Bob, NodeId::Charlie) {
            match msg.payload {
                Payload::HeraldSign(s) => sign_ab = Some(s),
                Payload::Bsm(b) => received_bits = Some(b),
                _ => {}
            }
        }
        let (sign_ab, bits) = (
            sign_ab.expect("AB herald sign sent"),
            received_bits.expect("Bob's BSM sent"),
        );
        let pauli = FeedForward::get(false).charlie[sign_index(sign_ab)][sign_index(h_bc.sign)]
            [bits.comm as usize][bits.memory as usize];
        let corrected = relabel(
            &rho_ac.apply_unitary(&gates::pauli(pauli), &[CHARLIE_COMM])?,
            &[ALICE, CHARLIE_COMM],
        )?;
        let teleporter = self.charlie_store(&corrected)?;

        // Input and Charlie's BSM.
        let joint = teleporter.tensor(&self.input_state(input)?)?;
        let (charlie_bits, rho_a) =
            self.sample_bsm(&joint, CHARLIE_MEMORY, CHARLIE_COMM, &self.charlie, rng)?;
        let charlie_cr = rng.random::<f64>() < cfg.charlie_cr_pass;
        out.charlie_bits = Some(charlie_bits);
        out.wall_time_s = self.shot_duration(n, q, 3);
        if !mode.charlie_policy().accepts(&charlie_bits, charlie_cr) {
            queue.send(
                NodeId::Charlie,
                NodeId::Alice,
                Payload::Abort(AbortReason::CharlieRejected),
            );
            out.abort = Some(AbortReason::CharlieRejected);
            out.messages = queue.log().to_vec();
            return Ok(out);
        }
        queue.send(NodeId::Charlie, NodeId::Alice, Payload::Bsm(charlie_bits));

        // Alice: wait for Charlie's result, correct, decohere.
        let msg = queue
            .receive(NodeId::Charlie, NodeId::Alice)
            .expect("Alice acts only after Charlie's BSM message");
        let Payload::Bsm(bits) = msg.payload else {
            unreachable!("Charlie sends BSM bits to Alice before anything else")
        };
        let mut alice = rho_a;
        if cfg.noise.alice_decoupling {
            let [px, py, pz] =
                decoupling_pauli_probabilities(cfg.timing.alice_wait_s(q), &cfg.noise.alice_fits)?;
            alice = alice.apply_channel(&Channel::pauli(px, py, pz)?, &[ALICE])?;
        }
        if cfg.noise.alice_depolarizing > 0.0 {
            alice = alice.apply_channel(&depolarizing(cfg.noise.alice_depolarizing)?, &[ALICE])?;
        }
        if ionization_event(cfg.noise.alice_ionization, rng) {
            out.ionized = true;
            alice = ionize(&alice, ALICE)?;
        }
        if cfg.feedforward {
            let k = FeedForward::get(cfg.storage_basis_change).alice[bits.comm as usize]
                [bits.memory as usize];
            alice =
                alice.apply_unitary(&alice_correction(k, cfg.storage_basis_change), &[ALICE])?;
        }
        let direction: i8 = if rng.random::<bool>() { 1 } else { -1 };
        out.tomography = Some((
            direction,
            measure_along(&alice, input, direction, cfg.noise.alice_readout, rng)?,
        ));
        out.output = Some(alice);
        out.messages = queue.log().to_vec();
        Ok(out)
    }

    /// Samples a BSM: true bits from the state, reported bits from the readout
    /// model. Returns the reported bits and the normalized remaining state.
    fn sample_bsm<R: Rng + ?Sized>(
        &self,
        rho: &State,
        memory: &str,
        comm: &str,
        readout: &BsmReadout,
        rng: &mut R,
    ) -> Result<(BsmBits, State), ProtocolError> {
        let branches = bsm_branches(rho, memory, comm, readout.gate_depolarizing)?;
        let u = rng.random::<f64>() * rho.trace();
        let mut acc = 0.0;
        let mut pick = (1usize, 1usize);
        'outer: for c in 0..2 {
            for m in 0..2 {
                acc += branches[c][m].trace();
                if u < acc {
                    pick = (c, m);
                    break 'outer;
                }
            }
        }
        let (c, m) = pick;
        let comm_bit = if rng.random::<f64>() < readout.comm[c] {
            c as u8
        } else {
            1 - c as u8
        };
        let bar = bar_readout(
            &State::basis(memory, 2, m),
            readout.reps,
            &readout.memory,
            rng,
        )?;
        let bits = BsmBits {
            comm: comm_bit,
            memory: bar.assigned,
            consistent: bar.consistent,
        };
        Ok((bits, branches[c][m].normalized()))
    }
}

/// Rows of the teleportation error budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeleportErrorSource {
    AliceIonization,
    AliceDecoherence,
    BobMemoryDepolarizing,
    BobMemoryDephasing,
    CharlieMemoryDepolarizing,
    BobMemoryReadout,
    BobCommReadout,
    CharlieMemoryReadout,
    CharlieCommReadout,
    /// Both links with all their imperfections, nodes ideal.
    Links,
    Combined,
}

impl TeleportErrorSource {
    pub const ALL: [TeleportErrorSource; 11] = [
        TeleportErrorSource::AliceIonization,
        TeleportErrorSource::AliceDecoherence,
        TeleportErrorSource::BobMemoryDepolarizing,
        TeleportErrorSource::BobMemoryDephasing,
        TeleportErrorSource::CharlieMemoryDepolarizing,
        TeleportErrorSource::BobMemoryReadout,
        TeleportErrorSource::BobCommReadout,
        TeleportErrorSource::CharlieMemoryReadout,
        TeleportErrorSource::CharlieCommReadout,
        TeleportErrorSource::Links,
        TeleportErrorSource::Combined,
    ];

    /// Config where only this source (or group) is switched on, relative to
    /// ideal nodes and links that keep their protocol error.
    pub fn isolate(self, full: &ProtocolConfig) -> ProtocolConfig {
        use TeleportErrorSource as S;
        if self == S::Combined {
            return full.clone();
        }
        let mut cfg = full.clone();
        cfg.noise = NoiseParams::noiseless();
        if self != S::Links {
            cfg.clear_link_noise();
        }
        let (n, f) = (&mut cfg.noise, &full.noise);
        match self {
            S::AliceIonization => n.alice_ionization = f.alice_ionization,
            S::AliceDecoherence => {
                n.alice_decoupling = f.alice_decoupling;
                n.alice_fits = f.alice_fits;
                n.alice_depolarizing = f.alice_depolarizing;
            }
            S::BobMemoryDepolarizing => {
                n.bob_memory_depolarizing = f.bob_memory_depolarizing;
                n.storage_deficit = f.storage_deficit;
            }
            S::BobMemoryDephasing => n.bob_memory_dephasing = f.bob_memory_dephasing,
            S::CharlieMemoryDepolarizing => {
                n.charlie_memory_depolarizing = f.charlie_memory_depolarizing
            }
            S::BobMemoryReadout => n.bob_readout = f.bob_readout,
            S::BobCommReadout => n.bob_comm_readout = f.bob_comm_readout,
            S::CharlieMemoryReadout => n.charlie_readout = f.charlie_readout,
            S::CharlieCommReadout => n.charlie_comm_readout = f.charlie_comm_readout,
            S::Links | S::Combined => {}
        }
        cfg
    }

    pub fn name(self) -> &'static str {
        use TeleportErrorSource as S;
        match self {
            S::AliceIonization => "alice-ionization",
            S::AliceDecoherence => "alice-decoherence",
            S::BobMemoryDepolarizing => "bob-memory-depolarizing",
            S::BobMemoryDephasing => "bob-memory-dephasing",
            S::CharlieMemoryDepolarizing => "charlie-memory-depolarizing",
            S::BobMemoryReadout => "bob-memory-readout",
            S::BobCommReadout => "bob-comm-readout",
            S::CharlieMemoryReadout => "charlie-memory-readout",
            S::CharlieCommReadout => "charlie-comm-readout",
            S::Links => "links",
            S::Combined => "combined",
        }
    }
}

impl std::str::FromStr for TeleportErrorSource {
    type Err = ProtocolError;
    fn from_str(s: &str) -> Result<Self, ProtocolError> {
        Self::ALL
            .into_iter()
            .find(|src| src.name() == s.trim())
            .ok_or_else(|| ProtocolError::InvalidConfig(format!("unknown error source {s:?}")))
    }
}

/// Infidelity of the six-state average in `mode` with each source on its own.
/// The ideal reference keeps the links' protocol error, so single-source rows
/// are reported as the drop from that reference; `Links` and `Combined` are
/// absolute infidelities.
pub fn teleport_error_budget(
    cfg: &ProtocolConfig,
    mode: TeleportMode,
) -> Result<Vec<(TeleportErrorSource, f64)>, ProtocolError> {
    let mut reference = cfg.clone();
    reference.noise = NoiseParams::noiseless();
    reference.clear_link_noise();
    let f_ref = Teleportation::new(&reference)?.average_fidelity(mode)?;
    TeleportErrorSource::ALL
        .into_iter()
        .map(|src| {
            let f = Teleportation::new(&src.isolate(cfg))?.average_fidelity(mode)?;
            let infidelity = match src {
                TeleportErrorSource::Links | TeleportErrorSource::Combined => 1.0 - f,
                _ => f_ref - f,
            };
            Ok((src, infidelity))
        })
        .collect()
}

/// Analytic run of one input.
pub fn run_teleportation(
    cfg: &ProtocolConfig,
    input: Cardinal,
    mode: TeleportMode,
) -> Result<TeleportOutcome, ProtocolError> {
    Teleportation::new(cfg)?.analytic(input, mode)
}

pub fn per_bsm_outcome_fidelity(cfg: &ProtocolConfig) -> Result<[[f64; 2]; 2], ProtocolError> {
    Teleportation::new(cfg)?.per_bsm_outcome_fidelity()
}

pub fn no_feedforward_fidelity(cfg: &ProtocolConfig) -> Result<f64, ProtocolError> {
    Teleportation::new(cfg)?.no_feedforward_fidelity()
}

/// Rotation taking the measurement direction onto |0⟩.
fn measurement_frame(target: Cardinal, direction: i8) -> Matrix {
    let axis = if direction >= 0 {
        target
    } else {
        opposite(target)
    };
    axis.preparation().adjoint()
}

fn opposite(c: Cardinal) -> Cardinal {
    match c {
        Cardinal::PlusX => Cardinal::MinusX,
        Cardinal::MinusX => Cardinal::PlusX,
        Cardinal::PlusY => Cardinal::MinusY,
        Cardinal::MinusY => Cardinal::PlusY,
        Cardinal::PlusZ => Cardinal::MinusZ,
        Cardinal::MinusZ => Cardinal::PlusZ,
    }
}

/// P(outcome 0) when measuring a qubit along ±`target` with assignment
/// fidelities `readout`.
pub fn outcome_zero_probability(
    rho: &State,
    target: Cardinal,
    direction: i8,
    readout: [f64; 2],
) -> Result<f64, ProtocolError> {
    let label = rho.labels()[0].clone();
    let rotated = rho.apply_unitary(&measurement_frame(target, direction), &[label.as_str()])?;
    let p0 = rotated.matrix()[(0, 0)].re / rotated.trace();
    Ok(readout[0] * p0 + (1.0 - readout[1]) * (1.0 - p0))
}

/// Samples one readout along ±`target`.
pub fn measure_along<R: Rng + ?Sized>(
    rho: &State,
    target: Cardinal,
    direction: i8,
    readout: [f64; 2],
    rng: &mut R,
) -> Result<u8, ProtocolError> {
    let p0 = outcome_zero_probability(rho, target, direction, readout)?;
    Ok(u8::from(rng.random::<f64>() >= p0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FidelityEstimate {
    pub fidelity: f64,
    pub std_error: f64,
    pub shots: u64,
}

/// Fidelity from counts of outcome 0 along +target and −target. Readout
/// asymmetry cancels in the difference of the two directions.
pub fn fidelity_from_counts(
    plus: (u64, u64),
    minus: (u64, u64),
    readout: [f64; 2],
) -> FidelityEstimate {
    let contrast = readout[0] + readout[1] - 1.0;
    let rate = |(zeros, total): (u64, u64)| {
        if total == 0 {
            0.0
        } else {
            zeros as f64 / total as f64
        }
    };
    let var = |(zeros, total): (u64, u64)| {
        if total == 0 {
            0.0
        } else {
            let p = zeros as f64 / total as f64;
            p * (1.0 - p) / total as f64
        }
    };
    FidelityEstimate {
        fidelity: 0.5 + (rate(plus) - rate(minus)) / (2.0 * contrast),
        std_error: (var(plus) + var(minus)).sqrt() / (2.0 * contrast),
        shots: plus.1 + minus.1,
    }
}

/// Tomographic fidelity estimate from `shots` readouts split evenly over the
/// two directions.
pub fn tomography<R: Rng + ?Sized>(
    rho: &State,
    target: Cardinal,
    readout: [f64; 2],
    shots: u64,
    rng: &mut R,
) -> Result<FidelityEstimate, ProtocolError> {
    let mut plus = (0, 0);
    let mut minus = (0, 0);
    for i in 0..shots {
        let direction = if i % 2 == 0 { 1 } else { -1 };
        let bit = measure_along(rho, target, direction, readout, rng)?;
        let slot = if direction > 0 { &mut plus } else { &mut minus };
        slot.0 += u64::from(bit == 0);
        slot.1 += 1;
    }
    Ok(fidelity_from_counts(plus, minus, readout))
}
