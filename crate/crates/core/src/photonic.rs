//! Single-click heralded entanglement between two emitters.
//!
//! Each node's post-excitation state is split into ZPL and PSB photons, sorted
//! into inside/outside the detection windows and passed through transmission
//! loss. Lost photons end up in distinct undetected modes, so every branch of
//! the resulting [`SpinPhotonState`] is a pure state over the spin and the
//! number of ZPL photons reaching the central beam splitter.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emitter::{
    calibrate_pulse, solve_emission_cached, window_probabilities, EmissionProbabilities,
    EmitterError, EmitterParams, Epochs, Grid, PulseShape, Window, WindowProbabilities,
};
use crate::hilbert::{gates, HilbertError};
use crate::{Ket, Matrix, State};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error(transparent)]
    Emitter(#[from] EmitterError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("invalid link parameter: {0}")]
    InvalidParams(String),
    #[error("nodes use different ZPL windows ({0} ns vs {1} ns)")]
    WindowMismatch(f64, f64),
    #[error("no heralds match the requested PSB flag")]
    EmptyConditioning,
    #[error("PSB detection efficiency must be positive")]
    ZeroEfficiency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Epoch {
    During,
    After,
}

/// Photons that never reach a detector, counted per loss channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Undetected {
    pub zpl_outside: u8,
    pub zpl_lost: u8,
    pub psb_outside: u8,
    pub psb_lost_during: u8,
    pub psb_lost_after: u8,
}

impl Undetected {
    pub fn zpl(&self) -> u8 {
        self.zpl_outside + self.zpl_lost
    }

    pub fn psb(&self) -> u8 {
        self.psb_outside + self.psb_lost_during + self.psb_lost_after
    }
}

/// One incoherent component of a node's spin-photon state.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub undetected: Undetected,
    pub psb_during: u8,
    pub psb_after: u8,
    /// Amplitudes indexed by [spin][ZPL photons sent to the beam splitter].
    pub amps: [[f64; 3]; 2],
}

impl Branch {
    pub fn weight(&self) -> f64 {
        self.amps.iter().flatten().map(|a| a * a).sum()
    }

    /// Number of detected PSB photons.
    pub fn detected_psb(&self) -> u8 {
        self.psb_during + self.psb_after
    }

    /// PSB flag raised by this branch, tagged during if any detection was.
    pub fn flag(&self) -> Option<Epoch> {
        if self.psb_during > 0 {
            Some(Epoch::During)
        } else if self.psb_after > 0 {
            Some(Epoch::After)
        } else {
            None
        }
    }

    /// 1: nothing lost, 2: one ZPL lost, 3: one PSB lost, 4: two lost.
    pub fn loss_class(&self) -> u8 {
        match (self.undetected.zpl(), self.undetected.psb()) {
            (0, 0) => 1,
            (1, 0) => 2,
            (0, 1) => 3,
            _ => 4,
        }
    }

    /// Spin vector accompanying `n` ZPL photons.
    pub fn spin_vector(&self, n: usize) -> [f64; 2] {
        [self.amps[0][n], self.amps[1][n]]
    }
}

#[derive(Clone, Debug)]
pub struct SpinPhotonState {
    pub branches: Vec<Branch>,
    pub zpl_window_ns: f64,
}

impl SpinPhotonState {
    pub fn total_weight(&self) -> f64 {
        self.branches.iter().map(Branch::weight).sum()
    }
}

/// Per-node optical parameters after calibration.
#[derive(Clone, Debug)]
pub struct NodeOptics {
    pub alpha: f64,
    pub p_zpl: f64,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub windows: WindowProbabilities,
    /// ZPL transmission and detection efficiency up to the central station.
    pub eta_zpl: f64,
    /// PSB collection and detection efficiency.
    pub eta_psb: f64,
}

impl NodeOptics {
    fn validate(&self) -> Result<(), LinkError> {
        let w = &self.windows;
        let values = [
            self.alpha,
            self.p_zpl,
            self.p0,
            self.p1,
            self.p2,
            self.eta_zpl,
            self.eta_psb,
            w.dz1,
            w.db1.total(),
            w.dz2 + w.dz3,
            w.db2.total() + w.db3.total(),
            w.dzb1.total() + w.dzb2.total() + w.dzb3,
        ];
        if values.iter().any(|v| !(-1e-12..=1.0 + 1e-9).contains(v)) {
            return Err(LinkError::InvalidParams(format!(
                "probability outside [0, 1] in {values:?}"
            )));
        }
        if (self.p0 + self.p1 + self.p2 - 1.0).abs() > 1e-6 {
            return Err(LinkError::InvalidParams(
                "photon-number probabilities do not sum to one".into(),
            ));
        }
        Ok(())
    }

    /// Mean number of in-window ZPL photons per bright-state excitation.
    pub fn mean_zpl_in_window(&self) -> f64 {
        let w = &self.windows;
        let pz = self.p_zpl;
        pz * self.p1 * w.dz1
            + self.p2
                * (pz * pz * (2.0 * w.dz2 + w.dz3)
                    + 2.0 * pz * (1.0 - pz) * (w.dzb1.total() + w.dzb3))
    }
}

#[derive(Clone, Copy, Default)]
struct Fate {
    und: Undetected,
    psb_during: u8,
    psb_after: u8,
    zpl: u8,
}

impl Fate {
    fn merge(self, o: Fate) -> Fate {
        let u = &self.und;
        let v = &o.und;
        Fate {
            und: Undetected {
                zpl_outside: u.zpl_outside + v.zpl_outside,
                zpl_lost: u.zpl_lost + v.zpl_lost,
                psb_outside: u.psb_outside + v.psb_outside,
                psb_lost_during: u.psb_lost_during + v.psb_lost_during,
                psb_lost_after: u.psb_lost_after + v.psb_lost_after,
            },
            psb_during: self.psb_during + o.psb_during,
            psb_after: self.psb_after + o.psb_after,
            zpl: self.zpl + o.zpl,
        }
    }
}

type Fates = Vec<(f64, Fate)>;

fn product(a: &Fates, b: &Fates) -> Fates {
    a.iter()
        .flat_map(|(pa, fa)| b.iter().map(move |(pb, fb)| (pa * pb, fa.merge(*fb))))
        .collect()
}

fn zpl_inside(eta: f64) -> Fates {
    vec![
        (
            eta,
            Fate {
                zpl: 1,
                ..Default::default()
            },
        ),
        (
            1.0 - eta,
            Fate {
                und: Undetected {
                    zpl_lost: 1,
                    ..Default::default()
                },
                ..Default::default()
            },
        ),
    ]
}

fn zpl_outside() -> Fates {
    vec![(
        1.0,
        Fate {
            und: Undetected {
                zpl_outside: 1,
                ..Default::default()
            },
            ..Default::default()
        },
    )]
}

fn psb_inside(eta: f64, epoch: Epoch) -> Fates {
    match epoch {
        Epoch::During => vec![
            (
                eta,
                Fate {
                    psb_during: 1,
                    ..Default::default()
                },
            ),
            (
                1.0 - eta,
                Fate {
                    und: Undetected {
                        psb_lost_during: 1,
                        ..Default::default()
                    },
                    ..Default::default()
                },
            ),
        ],
        Epoch::After => vec![
            (
                eta,
                Fate {
                    psb_after: 1,
                    ..Default::default()
                },
            ),
            (
                1.0 - eta,
                Fate {
                    und: Undetected {
                        psb_lost_after: 1,
                        ..Default::default()
                    },
                    ..Default::default()
                },
            ),
        ],
    }
}

fn psb_outside() -> Fates {
    vec![(
        1.0,
        Fate {
            und: Undetected {
                psb_outside: 1,
                ..Default::default()
            },
            ..Default::default()
        },
    )]
}

fn scaled(p: f64, f: Fates) -> Fates {
    f.into_iter().map(|(q, x)| (p * q, x)).collect()
}

fn epoch_split(e: Epochs, f: impl Fn(Epoch) -> Fates) -> Fates {
    let mut out = scaled(e.during, f(Epoch::During));
    out.extend(scaled(e.after, f(Epoch::After)));
    out
}

/// Photon fates of a single emitted photon.
fn one_photon(node: &NodeOptics) -> Fates {
    let w = &node.windows;
    let pz = node.p_zpl;
    let mut out = scaled(pz * w.dz1, zpl_inside(node.eta_zpl));
    out.extend(scaled(pz * (1.0 - w.dz1), zpl_outside()));
    out.extend(scaled(
        1.0 - pz,
        epoch_split(w.db1, |e| psb_inside(node.eta_psb, e)),
    ));
    out.extend(scaled((1.0 - pz) * (1.0 - w.db1.total()), psb_outside()));
    out
}

/// Photon fates of two emitted photons.
fn two_photons(node: &NodeOptics) -> Fates {
    let w = &node.windows;
    let (pz, pb) = (node.p_zpl, 1.0 - node.p_zpl);
    let (ez, eb) = (node.eta_zpl, node.eta_psb);
    let mut out = Vec::new();

    let zz = pz * pz;
    out.extend(scaled(
        zz * w.dz2,
        product(&zpl_inside(ez), &zpl_inside(ez)),
    ));
    out.extend(scaled(zz * w.dz3, product(&zpl_inside(ez), &zpl_outside())));
    out.extend(scaled(
        zz * (1.0 - w.dz2 - w.dz3),
        product(&zpl_outside(), &zpl_outside()),
    ));

    let bb = pb * pb;
    out.extend(scaled(
        bb * w.db2.during,
        product(
            &psb_inside(eb, Epoch::During),
            &psb_inside(eb, Epoch::During),
        ),
    ));
    out.extend(scaled(
        bb * w.db2.after,
        product(
            &psb_inside(eb, Epoch::During),
            &psb_inside(eb, Epoch::After),
        ),
    ));
    out.extend(scaled(
        bb,
        epoch_split(w.db3, |e| product(&psb_inside(eb, e), &psb_outside())),
    ));
    out.extend(scaled(
        bb * (1.0 - w.db2.total() - w.db3.total()),
        product(&psb_outside(), &psb_outside()),
    ));

    let zb = 2.0 * pz * pb;
    out.extend(scaled(
        zb,
        epoch_split(w.dzb1, |e| product(&zpl_inside(ez), &psb_inside(eb, e))),
    ));
    out.extend(scaled(
        zb,
        epoch_split(w.dzb2, |e| product(&zpl_outside(), &psb_inside(eb, e))),
    ));
    out.extend(scaled(
        zb * w.dzb3,
        product(&zpl_inside(ez), &psb_outside()),
    ));
    let rest = 1.0 - w.dzb1.total() - w.dzb2.total() - w.dzb3;
    out.extend(scaled(zb * rest, product(&zpl_outside(), &psb_outside())));
    out
}

pub fn branch_emission(node: &NodeOptics) -> Result<SpinPhotonState, LinkError> {
    node.validate()?;
    let a = node.alpha;
    // probability mass per (undetected, psb_during, psb_after) → [spin][zpl]
    let mut table: BTreeMap<(Undetected, u8, u8), [[f64; 3]; 2]> = BTreeMap::new();
    let mut add = |p: f64, spin: usize, f: Fate| {
        if p <= 0.0 {
            return;
        }
        let entry = table
            .entry((f.und, f.psb_during, f.psb_after))
            .or_insert([[0.0; 3]; 2]);
        entry[spin][f.zpl as usize] += p;
    };
    add(1.0 - a, 1, Fate::default());
    add(a * node.p0, 0, Fate::default());
    for (p, f) in one_photon(node) {
        add(a * node.p1 * p, 0, f);
    }
    for (p, f) in two_photons(node) {
        add(a * node.p2 * p, 0, f);
    }
    let branches = table
        .into_iter()
        .map(|((undetected, psb_during, psb_after), probs)| Branch {
            undetected,
            psb_during,
            psb_after,
            amps: probs.map(|row| row.map(|p| p.max(0.0).sqrt())),
        })
        .collect();
    Ok(SpinPhotonState {
        branches,
        zpl_window_ns: node.windows.zpl_window.length,
    })
}

#[derive(Clone, Debug)]
pub struct LinkParams {
    pub nodes: [NodeOptics; 2],
    pub visibility: f64,
    /// Optical phase uncertainty σ_φ in degrees.
    pub phase_sigma_deg: f64,
    pub dark_rate_hz: f64,
    pub zpl_window_ns: f64,
    pub psb_rejection: bool,
}

impl LinkParams {
    /// Dark-count probability per detector per window.
    pub fn dark_probability(&self) -> f64 {
        self.dark_rate_hz * self.zpl_window_ns * 1e-9
    }

    /// Factor on the cross-node coherence from visibility and phase noise.
    pub fn coherence_factor(&self) -> f64 {
        let sigma = self.phase_sigma_deg.to_radians();
        self.visibility.sqrt() * (-0.5 * sigma * sigma).exp()
    }
}

/// PSB flags raised at the two nodes, as an index 3·a + b with 0 = none,
/// 1 = during, 2 = after.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FlagClass(pub Option<Epoch>, pub Option<Epoch>);

impl FlagClass {
    pub const COUNT: usize = 9;

    fn code(e: Option<Epoch>) -> usize {
        match e {
            None => 0,
            Some(Epoch::During) => 1,
            Some(Epoch::After) => 2,
        }
    }

    pub fn index(&self) -> usize {
        3 * Self::code(self.0) + Self::code(self.1)
    }

    pub fn from_index(i: usize) -> Self {
        let dec = |c: usize| match c {
            0 => None,
            1 => Some(Epoch::During),
            _ => Some(Epoch::After),
        };
        Self(dec(i / 3), dec(i % 3))
    }

    pub fn flagged(&self) -> bool {
        self.0.is_some() || self.1.is_some()
    }
}

/// Heralded two-spin state for one detector click.
#[derive(Clone, Debug)]
pub struct Herald {
    /// +1 or −1 for the detector that clicked.
    pub sign: i8,
    /// Probability per attempt of an accepted herald on this detector.
    pub probability: f64,
    /// Normalized accepted state on spins ("a", "b"), spin 0 bright.
    pub state: State,
    /// Unnormalized herald states per flag class, before any rejection.
    pub by_flag: Vec<Matrix>,
}

impl Herald {
    pub fn target(&self) -> Ket {
        Ket::psi("a", "b", self.sign as f64)
    }

    pub fn fidelity(&self) -> f64 {
        self.state
            .fidelity(&self.target())
            .expect("two-qubit herald state")
    }
}

#[derive(Clone, Debug)]
pub struct HeraldedLink {
    pub heralds: [Herald; 2],
    /// Probability per attempt of heralds discarded by PSB rejection.
    pub rejected_probability: f64,
}

impl HeraldedLink {
    pub fn success_probability(&self) -> f64 {
        self.heralds.iter().map(|h| h.probability).sum()
    }

    /// Herald-weighted Bell fidelity of the accepted state.
    pub fn fidelity(&self) -> f64 {
        let p = self.success_probability();
        self.heralds
            .iter()
            .map(|h| h.probability * h.fidelity())
            .sum::<f64>()
            / p
    }

    pub fn infidelity(&self) -> f64 {
        1.0 - self.fidelity()
    }

    /// Herald probability per attempt, before rejection, for a flag class.
    pub fn flag_class_probability(&self, class: FlagClass) -> f64 {
        self.heralds
            .iter()
            .map(|h| h.by_flag[class.index()].trace().re)
            .sum()
    }

    fn raw_herald_probability(&self) -> f64 {
        (0..FlagClass::COUNT)
            .map(|i| self.flag_class_probability(FlagClass::from_index(i)))
            .sum()
    }

    /// P(flag with `epoch` at `node` | herald), before rejection.
    pub fn flag_probability(&self, node: usize, epoch: Epoch) -> f64 {
        let hit: f64 = (0..FlagClass::COUNT)
            .map(FlagClass::from_index)
            .filter(|c| {
                if node == 0 {
                    c.0 == Some(epoch)
                } else {
                    c.1 == Some(epoch)
                }
            })
            .map(|c| self.flag_class_probability(c))
            .sum();
        hit / self.raw_herald_probability()
    }

    /// Fraction of heralds accompanied by any PSB flag, before rejection.
    pub fn flagged_fraction(&self) -> f64 {
        let flagged: f64 = (1..FlagClass::COUNT)
            .map(|i| self.flag_class_probability(FlagClass::from_index(i)))
            .sum();
        flagged / self.raw_herald_probability()
    }
}

fn kron2(a: [f64; 2], b: [f64; 2]) -> [f64; 4] {
    [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]
}

fn add_outer(m: &mut [[f64; 4]; 4], x: &[f64; 4], y: &[f64; 4], s: f64) {
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] += s * x[i] * y[j];
        }
    }
}

fn to_matrix(m: &[[f64; 4]; 4]) -> Matrix {
    Matrix::from_fn(4, 4, |i, j| num_complex::Complex64::new(m[i][j], 0.0))
}

pub fn interfere_and_herald(
    a: &SpinPhotonState,
    b: &SpinPhotonState,
    link: &LinkParams,
) -> Result<HeraldedLink, LinkError> {
    if (a.zpl_window_ns - b.zpl_window_ns).abs() > 1e-12 {
        return Err(LinkError::WindowMismatch(a.zpl_window_ns, b.zpl_window_ns));
    }
    let kappa = link.coherence_factor();
    let pd = link.dark_probability();
    let zero = [[0.0; 4]; 4];
    let mut single = vec![zero; FlagClass::COUNT];
    let mut cross = vec![zero; FlagClass::COUNT];
    let mut none = vec![zero; FlagClass::COUNT];
    for ba in &a.branches {
        for bb in &b.branches {
            let class = FlagClass(ba.flag(), bb.flag()).index();
            let u = kron2(ba.spin_vector(1), bb.spin_vector(0));
            let w = kron2(ba.spin_vector(0), bb.spin_vector(1));
            let n0 = kron2(ba.spin_vector(0), bb.spin_vector(0));
            add_outer(&mut single[class], &u, &u, 1.0);
            add_outer(&mut single[class], &w, &w, 1.0);
            add_outer(&mut cross[class], &u, &w, 1.0);
            add_outer(&mut cross[class], &w, &u, 1.0);
            add_outer(&mut none[class], &n0, &n0, 1.0);
        }
    }
    let photon_weight = (1.0 - pd) * (1.0 - pd);
    let dark_weight = pd * (1.0 - pd);
    let mut rejected = 0.0;
    let heralds = [1i8, -1].map(|sign| {
        let by_flag: Vec<Matrix> = (0..FlagClass::COUNT)
            .map(|c| {
                let mut m = zero;
                for i in 0..4 {
                    for j in 0..4 {
                        m[i][j] = photon_weight
                            * 0.5
                            * (single[c][i][j] + sign as f64 * kappa * cross[c][i][j])
                            + dark_weight * none[c][i][j];
                    }
                }
                to_matrix(&m)
            })
            .collect();
        let mut accepted = Matrix::zeros(4, 4);
        for (c, m) in by_flag.iter().enumerate() {
            if link.psb_rejection && FlagClass::from_index(c).flagged() {
                rejected += m.trace().re;
            } else {
                accepted = &accepted + m;
            }
        }
        let probability = accepted.trace().re;
        let norm = if probability > 0.0 {
            1.0 / probability
        } else {
            0.0
        };
        let state = State::new(&["a", "b"], &[2, 2], accepted.scale_real(norm))
            .expect("4x4 Hermitian herald state");
        Herald {
            sign,
            probability,
            state,
            by_flag,
        }
    });
    Ok(HeraldedLink {
        heralds,
        rejected_probability: rejected,
    })
}

/// Which PSB flags to condition on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlagSelector {
    Node(usize, Epoch),
    Either(Epoch),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Basis {
    X,
    Y,
    Z,
}

/// Joint outcome distribution over 00, 01, 10, 11 (node a first) for heralds
/// carrying the selected flag, summed over both detectors.
pub fn psb_conditioned_correlations(
    link: &HeraldedLink,
    flag: FlagSelector,
    basis: Basis,
) -> Result<[f64; 4], LinkError> {
    let matches = |c: FlagClass| match flag {
        FlagSelector::Node(0, e) => c.0 == Some(e),
        FlagSelector::Node(_, e) => c.1 == Some(e),
        FlagSelector::Either(e) => c.0 == Some(e) || c.1 == Some(e),
    };
    let mut acc = Matrix::zeros(4, 4);
    for h in &link.heralds {
        for (i, m) in h.by_flag.iter().enumerate() {
            if matches(FlagClass::from_index(i)) {
                acc = &acc + m;
            }
        }
    }
    let total = acc.trace().re;
    if total <= 0.0 {
        return Err(LinkError::EmptyConditioning);
    }
    let mut rho = State::new(&["a", "b"], &[2, 2], acc.scale_real(1.0 / total))?;
    let rot = match basis {
        Basis::Z => None,
        Basis::X => Some(gates::hadamard()),
        // S† then H maps the Y eigenbasis onto Z
        Basis::Y => Some(&gates::hadamard() * &gates::phase(-std::f64::consts::FRAC_PI_2)),
    };
    if let Some(r) = rot {
        rho = rho.apply_unitary(&r, &["a"])?.apply_unitary(&r, &["b"])?;
    }
    let m = rho.matrix();
    Ok([m[(0, 0)].re, m[(1, 1)].re, m[(2, 2)].re, m[(3, 3)].re])
}

/// Estimated double-|0⟩ and double-excitation probabilities per node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub double_zero: f64,
    pub double_excitation: f64,
}

/// Infers error probabilities from flagged-herald rates, correcting for the
/// PSB detection efficiency and assuming heralds split evenly between nodes.
pub fn estimate_error_probs(
    link: &HeraldedLink,
    psb_efficiency: [f64; 2],
) -> Result<[ErrorEstimate; 2], LinkError> {
    let rates = |epoch| [0, 1].map(|node| link.flag_probability(node, epoch));
    estimate_from_rates(rates(Epoch::After), rates(Epoch::During), psb_efficiency)
}

fn estimate_from_rates(
    after: [f64; 2],
    during: [f64; 2],
    psb_efficiency: [f64; 2],
) -> Result<[ErrorEstimate; 2], LinkError> {
    if psb_efficiency.iter().any(|q| *q <= 0.0) {
        return Err(LinkError::ZeroEfficiency);
    }
    Ok([0, 1].map(|node| ErrorEstimate {
        double_zero: 2.0 * after[node] / psb_efficiency[node],
        double_excitation: 2.0 * during[node] / psb_efficiency[node],
    }))
}

/// Herald counts by PSB flag, as recorded in an experiment or sampled from a
/// link.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagCounts {
    pub heralds: u64,
    /// Heralds with a PSB detection after the pulse, per node.
    pub after: [u64; 2],
    /// Heralds with a PSB detection during the pulse, per node.
    pub during: [u64; 2],
}

impl FlagCounts {
    /// Draws the flag class of `heralds` independent heralds, before rejection.
    pub fn sample<R: Rng + ?Sized>(
        link: &HeraldedLink,
        heralds: u64,
        rng: &mut R,
    ) -> Result<Self, LinkError> {
        let weights: Vec<f64> = (0..FlagClass::COUNT)
            .map(|i| {
                link.flag_class_probability(FlagClass::from_index(i))
                    .max(0.0)
            })
            .collect();
        let dist =
            WeightedIndex::new(&weights).map_err(|e| LinkError::InvalidParams(e.to_string()))?;
        let mut counts = Self {
            heralds,
            ..Self::default()
        };
        for _ in 0..heralds {
            let FlagClass(a, b) = FlagClass::from_index(dist.sample(rng));
            for (node, flag) in [a, b].into_iter().enumerate() {
                match flag {
                    Some(Epoch::After) => counts.after[node] += 1,
                    Some(Epoch::During) => counts.during[node] += 1,
                    None => {}
                }
            }
        }
        Ok(counts)
    }

    /// Same estimator as [`estimate_error_probs`], on observed frequencies.
    pub fn estimate(&self, psb_efficiency: [f64; 2]) -> Result<[ErrorEstimate; 2], LinkError> {
        if self.heralds == 0 {
            return Err(LinkError::EmptyConditioning);
        }
        let n = self.heralds as f64;
        estimate_from_rates(
            self.after.map(|c| c as f64 / n),
            self.during.map(|c| c as f64 / n),
            psb_efficiency,
        )
    }
}

/// Configuration-level description of one node's optics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub alpha: f64,
    /// ZPL detection probability at the station per bright-state excitation,
    /// quoted at the reference window.
    pub zpl_detection: f64,
    /// PSB detection probability per emitted photon.
    pub psb_detection: f64,
    /// Target double-excitation probability P2.
    pub double_excitation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub nodes: [NodeSpec; 2],
    pub visibility: f64,
    pub phase_sigma_deg: f64,
    pub dark_rate_hz: f64,
    pub zpl_window_ns: f64,
    /// Opening of the ZPL window relative to the pulse start.
    pub zpl_offset_ns: f64,
    pub reference_window_ns: f64,
    pub psb_window_ns: f64,
    pub psb_rejection: bool,
    pub pulse: PulseShape,
    pub gamma: f64,
    pub p_zpl: f64,
    pub grid: Grid,
}

/// Noise sources of the single-error budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorSource {
    Protocol,
    DarkCounts,
    Visibility,
    DoubleExcitation,
    PhaseUncertainty,
}

impl ErrorSource {
    pub const ALL: [ErrorSource; 5] = [
        ErrorSource::Protocol,
        ErrorSource::DarkCounts,
        ErrorSource::Visibility,
        ErrorSource::DoubleExcitation,
        ErrorSource::PhaseUncertainty,
    ];
}

impl std::str::FromStr for ErrorSource {
    type Err = LinkError;
    fn from_str(s: &str) -> Result<Self, LinkError> {
        match s {
            "protocol" | "alpha" => Ok(Self::Protocol),
            "dark-counts" => Ok(Self::DarkCounts),
            "visibility" => Ok(Self::Visibility),
            "double-excitation" => Ok(Self::DoubleExcitation),
            "phase-uncertainty" => Ok(Self::PhaseUncertainty),
            other => Err(LinkError::InvalidParams(format!(
                "unknown error source `{other}`"
            ))),
        }
    }
}

impl LinkSpec {
    fn base(nodes: [NodeSpec; 2], phase_sigma_deg: f64) -> Self {
        Self {
            nodes,
            visibility: 0.90,
            phase_sigma_deg,
            dark_rate_hz: 10.0,
            zpl_window_ns: 15.0,
            zpl_offset_ns: 0.0,
            reference_window_ns: 15.0,
            psb_window_ns: 40.0,
            psb_rejection: true,
            pulse: PulseShape::square(6.0),
            gamma: 1.0 / 12.0,
            p_zpl: 0.03,
            grid: Grid::default(),
        }
    }

    pub fn alice_bob() -> Self {
        Self::base(
            [
                NodeSpec {
                    alpha: 0.07,
                    zpl_detection: 3.4e-4,
                    psb_detection: 0.10,
                    double_excitation: 0.06,
                },
                NodeSpec {
                    alpha: 0.05,
                    zpl_detection: 5.1e-4,
                    psb_detection: 0.10,
                    double_excitation: 0.06,
                },
            ],
            21.0,
        )
    }

    pub fn bob_charlie() -> Self {
        Self::base(
            [
                NodeSpec {
                    alpha: 0.05,
                    zpl_detection: 4.3e-4,
                    psb_detection: 0.12,
                    double_excitation: 0.08,
                },
                NodeSpec {
                    alpha: 0.10,
                    zpl_detection: 2.4e-4,
                    psb_detection: 0.12,
                    double_excitation: 0.08,
                },
            ],
            12.0,
        )
    }

    fn emission(
        &self,
        node: &NodeSpec,
        ideal: bool,
    ) -> Result<std::sync::Arc<EmissionProbabilities>, LinkError> {
        let params = EmitterParams {
            gamma: self.gamma,
            alpha: node.alpha,
            p_zpl: self.p_zpl,
        };
        if ideal {
            return Ok(std::sync::Arc::new(EmissionProbabilities::impulsive(
                self.gamma,
                self.pulse.start,
                &self.grid,
            )));
        }
        let pulse = calibrate_pulse(node.double_excitation, &self.pulse, &params, &self.grid)?;
        Ok(solve_emission_cached(&pulse, &params, &self.grid)?)
    }

    fn node_optics(&self, node: &NodeSpec, ideal_emission: bool) -> Result<NodeOptics, LinkError> {
        let em = self.emission(node, ideal_emission)?;
        let psb = Window::new(em.pulse_start, self.psb_window_ns);
        let zpl_start = em.pulse_start + self.zpl_offset_ns;
        let reference = window_probabilities(
            &em,
            Window::new(zpl_start, self.reference_window_ns),
            psb,
            em.pulse_end,
        )?;
        let windows = window_probabilities(
            &em,
            Window::new(zpl_start, self.zpl_window_ns),
            psb,
            em.pulse_end,
        )?;
        let total = em.p0 + em.p1 + em.p2;
        let mut optics = NodeOptics {
            alpha: node.alpha,
            p_zpl: self.p_zpl,
            p0: em.p0 / total,
            p1: em.p1 / total,
            p2: em.p2 / total,
            windows: reference,
            eta_zpl: 0.0,
            eta_psb: 0.0,
        };
        optics.eta_zpl = node.zpl_detection / optics.mean_zpl_in_window();
        optics.eta_psb = node.psb_detection / ((1.0 - self.p_zpl) * reference.db1.total());
        if optics.eta_zpl > 1.0 || optics.eta_psb > 1.0 {
            return Err(LinkError::InvalidParams(format!(
                "detection probabilities imply efficiencies above one ({}, {})",
                optics.eta_zpl, optics.eta_psb
            )));
        }
        optics.windows = windows;
        Ok(optics)
    }

    /// Calibrates emitters and efficiencies. `sources` selects which
    /// imperfections stay on; the single-click protocol error is always present.
    pub fn build_with(&self, sources: &[ErrorSource]) -> Result<LinkParams, LinkError> {
        let on = |s: ErrorSource| sources.contains(&s);
        let ideal = !on(ErrorSource::DoubleExcitation);
        Ok(LinkParams {
            nodes: [
                self.node_optics(&self.nodes[0], ideal)?,
                self.node_optics(&self.nodes[1], ideal)?,
            ],
            visibility: if on(ErrorSource::Visibility) {
                self.visibility
            } else {
                1.0
            },
            phase_sigma_deg: if on(ErrorSource::PhaseUncertainty) {
                self.phase_sigma_deg
            } else {
                0.0
            },
            dark_rate_hz: if on(ErrorSource::DarkCounts) {
                self.dark_rate_hz
            } else {
                0.0
            },
            zpl_window_ns: self.zpl_window_ns,
            psb_rejection: self.psb_rejection,
        })
    }

    pub fn build(&self) -> Result<LinkParams, LinkError> {
        self.build_with(&ErrorSource::ALL)
    }

    pub fn herald(&self) -> Result<HeraldedLink, LinkError> {
        herald_link(&self.build()?)
    }
}

pub fn herald_link(link: &LinkParams) -> Result<HeraldedLink, LinkError> {
    let a = branch_emission(&link.nodes[0])?;
    let b = branch_emission(&link.nodes[1])?;
    interfere_and_herald(&a, &b, link)
}

/// Infidelity added by one source on top of the protocol error; for
/// [`ErrorSource::Protocol`] the protocol error itself.
pub fn single_error_budget(spec: &LinkSpec, source: ErrorSource) -> Result<f64, LinkError> {
    let base = herald_link(&spec.build_with(&[])?)?.infidelity();
    if source == ErrorSource::Protocol {
        return Ok(base);
    }
    Ok(herald_link(&spec.build_with(&[source])?)?.infidelity() - base)
}

/// Two-photon visibility as a function of ZPL window length, interpolated
/// linearly between calibration points and held constant outside them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibilityTable {
    /// (window length in ns, visibility) pairs.
    pub points: Vec<(f64, f64)>,
}

impl Default for VisibilityTable {
    fn default() -> Self {
        Self {
            points: vec![(7.5, 0.95), (10.0, 0.93), (15.0, 0.90)],
        }
    }
}

impl VisibilityTable {
    pub fn at(&self, window_ns: f64) -> Result<f64, LinkError> {
        let mut pts = self.points.clone();
        if pts.is_empty()
            || pts
                .iter()
                .any(|(w, v)| *w <= 0.0 || !(0.0..=1.0).contains(v))
        {
            return Err(LinkError::InvalidParams(
                "visibility table needs positive windows and values in [0, 1]".into(),
            ));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let first = pts[0];
        let last = pts[pts.len() - 1];
        if window_ns <= first.0 {
            return Ok(first.1);
        }
        if window_ns >= last.0 {
            return Ok(last.1);
        }
        let k = pts
            .iter()
            .position(|p| p.0 >= window_ns)
            .expect("window inside table range");
        let (w0, v0) = pts[k - 1];
        let (w1, v1) = pts[k];
        Ok(v0 + (v1 - v0) * (window_ns - w0) / (w1 - w0))
    }
}
