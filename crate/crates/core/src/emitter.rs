//! Driven three-level emitter with up to two spontaneous emissions.
//!
//! The optical transition |0⟩ ↔ |e⟩ is driven by H = Ω(t)(|e⟩⟨0| + h.c.), so a
//! pulse area of π corresponds to ∫Ω dt = π/2. The master equation is solved on
//! {|0⟩, |e⟩, |0,1⟩, |e,1⟩, |0,2⟩}. Photon timing is resolved by unravelling the
//! first emission: between jumps the populated sector evolves as a pure state
//! under the no-jump Hamiltonian.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmitterError {
    #[error("time step {dt} ns too large (needs Ω·dt and γ·dt below 0.05)")]
    StepTooLarge { dt: f64 },
    #[error("invalid emitter parameter: {0}")]
    InvalidParams(String),
    #[error("window [{start}, {end}] ns lies outside the simulated horizon")]
    WindowOutsideHorizon { start: f64, end: f64 },
    #[error("target double-excitation probability {target} not bracketed by [{low}, {high}]")]
    NonBracketing { target: f64, low: f64, high: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseKind {
    Square,
    /// Gaussian envelope with σ = duration/6, truncated to the pulse interval.
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub kind: PulseKind,
    /// Peak Rabi amplitude Ω_max in rad/ns.
    pub peak_rabi: f64,
    /// Duration in ns.
    pub duration: f64,
    /// Start time in ns.
    pub start: f64,
}

impl PulseShape {
    pub fn square(duration: f64) -> Self {
        Self {
            kind: PulseKind::Square,
            peak_rabi: 0.0,
            duration,
            start: 0.0,
        }
    }

    pub fn gaussian(duration: f64) -> Self {
        Self {
            kind: PulseKind::Gaussian,
            peak_rabi: 0.0,
            duration,
            start: 0.0,
        }
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    /// Envelope normalized to a unit peak.
    fn envelope(&self, t: f64) -> f64 {
        if t < self.start || t >= self.end() {
            return 0.0;
        }
        match self.kind {
            PulseKind::Square => 1.0,
            PulseKind::Gaussian => {
                let sigma = self.duration / 6.0;
                let x = (t - self.start - self.duration / 2.0) / sigma;
                (-0.5 * x * x).exp()
            }
        }
    }

    pub fn rabi(&self, t: f64) -> f64 {
        self.peak_rabi * self.envelope(t)
    }

    /// ∫ envelope dt, by Simpson's rule for the Gaussian case.
    fn envelope_integral(&self) -> f64 {
        match self.kind {
            PulseKind::Square => self.duration,
            PulseKind::Gaussian => {
                let n = 2000;
                let h = self.duration / n as f64;
                let mut s = 0.0;
                for k in 0..=n {
                    let w = if k == 0 || k == n {
                        1.0
                    } else if k % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    let t = (self.start + k as f64 * h).min(self.end() - 1e-12);
                    s += w * self.envelope(t);
                }
                s * h / 3.0
            }
        }
    }

    /// Pulse area 2∫Ω dt in radians.
    pub fn area(&self) -> f64 {
        2.0 * self.peak_rabi * self.envelope_integral()
    }

    pub fn with_area(&self, area: f64) -> Self {
        Self {
            peak_rabi: area / (2.0 * self.envelope_integral()),
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmitterParams {
    /// Spontaneous emission rate γ in 1/ns.
    pub gamma: f64,
    /// Bright-state population α.
    pub alpha: f64,
    /// Probability that an emitted photon is in the zero-phonon line.
    pub p_zpl: f64,
}

impl Default for EmitterParams {
    fn default() -> Self {
        Self {
            gamma: 1.0 / 12.0,
            alpha: 0.07,
            p_zpl: 0.03,
        }
    }
}

impl EmitterParams {
    pub fn validate(&self) -> Result<(), EmitterError> {
        if !(self.gamma > 0.0) {
            return Err(EmitterError::InvalidParams(format!(
                "gamma = {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(EmitterError::InvalidParams(format!(
                "alpha = {}",
                self.alpha
            )));
        }
        if !(self.p_zpl > 0.0 && self.p_zpl < 1.0) {
            return Err(EmitterError::InvalidParams(format!(
                "p_zpl = {}",
                self.p_zpl
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Requested step in ns; snapped so the pulse spans an integer number of steps.
    pub dt: f64,
    /// Simulated span after the pulse start, in ns.
    pub horizon: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            dt: 0.01,
            horizon: 150.0,
        }
    }
}

/// Photon-number and photon-timing statistics of one excitation from |0⟩.
#[derive(Clone, Debug)]
pub struct EmissionProbabilities {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub pulse_start: f64,
    pub pulse_end: f64,
    pub dt: f64,
    /// First-photon emission density γ·ρ_ee(t) at t = pulse_start + k·dt.
    pub first_density: Vec<f64>,
    /// Second-photon marginal density γ·ρ_(e,1)(t) on the same grid.
    pub second_density: Vec<f64>,
    /// Largest deviation of the trace from one during integration.
    pub max_trace_error: f64,
    gamma: f64,
    /// For first-photon times inside the pulse: the conditional second-photon
    /// density on grid points up to the pulse end, and the excited population
    /// left at the pulse end.
    conditional: Vec<Conditional>,
}

#[derive(Clone, Debug)]
struct Conditional {
    density: Vec<f64>,
    excited_at_end: f64,
    total: f64,
}

impl EmissionProbabilities {
    pub fn horizon_end(&self) -> f64 {
        self.pulse_start + (self.first_density.len() - 1) as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        self.pulse_start + k as f64 * self.dt
    }

    /// Probability that a second photon follows a first one emitted at grid point k.
    pub fn second_photon_probability(&self, k: usize) -> f64 {
        self.conditional.get(k).map_or(0.0, |c| c.total)
    }

    /// Instantaneous excitation at `start` followed by a single exponential decay.
    pub fn impulsive(gamma: f64, start: f64, grid: &Grid) -> Self {
        let n = (grid.horizon / grid.dt).round() as usize;
        let first = (0..=n)
            .map(|k| gamma * (-gamma * k as f64 * grid.dt).exp())
            .collect();
        Self {
            p0: 0.0,
            p1: 1.0,
            p2: 0.0,
            pulse_start: start,
            pulse_end: start,
            dt: grid.dt,
            first_density: first,
            second_density: vec![0.0; n + 1],
            max_trace_error: 0.0,
            gamma,
            conditional: vec![Conditional {
                density: vec![0.0],
                excited_at_end: 0.0,
                total: 0.0,
            }],
        }
    }

    fn pulse_points(&self) -> usize {
        self.conditional.len()
    }

    fn weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.first_density.len() {
            0.5 * self.dt
        } else {
            self.dt
        }
    }

    pub fn mean_photon_number(&self) -> f64 {
        (0..self.first_density.len())
            .map(|k| self.weight(k) * (self.first_density[k] + self.second_density[k]))
            .sum()
    }
}

type Rho = [[Complex64; 5]; 5];

const G: usize = 0;
const E: usize = 1;
const G1: usize = 2;
const E1: usize = 3;
const G2: usize = 4;

fn lindblad_rhs(rho: &Rho, omega: f64, gamma: f64) -> Rho {
    let z = Complex64::new(0.0, 0.0);
    let mut out = [[z; 5]; 5];
    // H couples G↔E and G1↔E1 with real amplitude omega
    let h_apply_left = |r: &Rho, i: usize, j: usize| -> Complex64 {
        match i {
            G => r[E][j] * omega,
            E => r[G][j] * omega,
            G1 => r[E1][j] * omega,
            E1 => r[G1][j] * omega,
            _ => z,
        }
    };
    let h_apply_right = |r: &Rho, i: usize, j: usize| -> Complex64 {
        match j {
            G => r[i][E] * omega,
            E => r[i][G] * omega,
            G1 => r[i][E1] * omega,
            E1 => r[i][G1] * omega,
            _ => z,
        }
    };
    let mi = Complex64::new(0.0, -1.0);
    let decays = |k: usize| k == E || k == E1;
    for i in 0..5 {
        for j in 0..5 {
            let mut v = mi * (h_apply_left(rho, i, j) - h_apply_right(rho, i, j));
            let mut damp = 0.0;
            if decays(i) {
                damp += 0.5 * gamma;
            }
            if decays(j) {
                damp += 0.5 * gamma;
            }
            v -= rho[i][j] * damp;
            out[i][j] = v;
        }
    }
    // jump feeding: E→G1 and E1→G2 (populations and the G1–G2 coherence they carry)
    out[G1][G1] += rho[E][E] * gamma;
    out[G2][G2] += rho[E1][E1] * gamma;
    out[G1][G2] += rho[E][E1] * gamma;
    out[G2][G1] += rho[E1][E] * gamma;
    out
}

fn axpy(a: &Rho, h: f64, k: &Rho) -> Rho {
    let mut out = *a;
    for i in 0..5 {
        for j in 0..5 {
            out[i][j] += k[i][j] * h;
        }
    }
    out
}

fn rk4_step(rho: &Rho, t: f64, h: f64, pulse: &PulseShape, gamma: f64) -> Rho {
    // evaluate the drive just inside each step so discontinuities sit on step edges
    let eps = 1e-9 * h;
    let k1 = lindblad_rhs(rho, pulse.rabi(t + eps), gamma);
    let k2 = lindblad_rhs(&axpy(rho, h / 2.0, &k1), pulse.rabi(t + h / 2.0), gamma);
    let k3 = lindblad_rhs(&axpy(rho, h / 2.0, &k2), pulse.rabi(t + h / 2.0), gamma);
    let k4 = lindblad_rhs(&axpy(rho, h, &k3), pulse.rabi(t + h - eps), gamma);
    let mut out = *rho;
    for i in 0..5 {
        for j in 0..5 {
            out[i][j] += (k1[i][j] + (k2[i][j] + k3[i][j]) * 2.0 + k4[i][j]) * (h / 6.0);
        }
    }
    out
}

/// No-jump evolution of the (ground, excited) amplitude pair.
fn nojump_rhs(psi: [Complex64; 2], omega: f64, gamma: f64) -> [Complex64; 2] {
    let mi = Complex64::new(0.0, -1.0);
    [
        mi * omega * psi[1],
        mi * omega * psi[0] - psi[1] * (0.5 * gamma),
    ]
}

fn nojump_step(
    psi: [Complex64; 2],
    t: f64,
    h: f64,
    pulse: &PulseShape,
    gamma: f64,
) -> [Complex64; 2] {
    let eps = 1e-9 * h;
    let add = |a: [Complex64; 2], s: f64, b: [Complex64; 2]| [a[0] + b[0] * s, a[1] + b[1] * s];
    let k1 = nojump_rhs(psi, pulse.rabi(t + eps), gamma);
    let k2 = nojump_rhs(add(psi, h / 2.0, k1), pulse.rabi(t + h / 2.0), gamma);
    let k3 = nojump_rhs(add(psi, h / 2.0, k2), pulse.rabi(t + h / 2.0), gamma);
    let k4 = nojump_rhs(add(psi, h, k3), pulse.rabi(t + h - eps), gamma);
    [
        psi[0] + (k1[0] + (k2[0] + k3[0]) * 2.0 + k4[0]) * (h / 6.0),
        psi[1] + (k1[1] + (k2[1] + k3[1]) * 2.0 + k4[1]) * (h / 6.0),
    ]
}

fn effective_step(pulse: &PulseShape, grid: &Grid) -> f64 {
    let steps = (pulse.duration / grid.dt).round().max(1.0);
    pulse.duration / steps
}

pub fn solve_emission(
    pulse: &PulseShape,
    params: &EmitterParams,
    grid: &Grid,
) -> Result<EmissionProbabilities, EmitterError> {
    params.validate()?;
    if !(pulse.duration > 0.0) || pulse.peak_rabi < 0.0 {
        return Err(EmitterError::InvalidParams(format!(
            "pulse duration {} / amplitude {}",
            pulse.duration, pulse.peak_rabi
        )));
    }
    let dt = effective_step(pulse, grid);
    if pulse.peak_rabi * dt >= 0.05 || params.gamma * dt >= 0.05 || !(grid.dt > 0.0) {
        return Err(EmitterError::StepTooLarge { dt: grid.dt });
    }
    if grid.horizon < pulse.duration {
        return Err(EmitterError::InvalidParams(format!(
            "horizon {} shorter than pulse",
            grid.horizon
        )));
    }
    let gamma = params.gamma;
    let n_steps = (grid.horizon / dt).round() as usize;
    let pulse_steps = (pulse.duration / dt).round() as usize;

    let z = Complex64::new(0.0, 0.0);
    let mut rho: Rho = [[z; 5]; 5];
    rho[G][G] = Complex64::new(1.0, 0.0);
    let mut first = Vec::with_capacity(n_steps + 1);
    let mut second = Vec::with_capacity(n_steps + 1);
    let mut max_trace_error: f64 = 0.0;
    first.push(0.0);
    second.push(0.0);
    for k in 0..n_steps {
        let t = pulse.start + k as f64 * dt;
        rho = rk4_step(&rho, t, dt, pulse, gamma);
        let tr: f64 = (0..5).map(|i| rho[i][i].re).sum();
        max_trace_error = max_trace_error.max((tr - 1.0).abs());
        first.push(gamma * rho[E][E].re);
        second.push(gamma * rho[E1][E1].re);
    }
    // remaining excited population emits after the horizon without drive
    let p0 = rho[G][G].re;
    let p1 = rho[G1][G1].re + rho[E][E].re;
    let p2 = rho[G2][G2].re + rho[E1][E1].re;

    let mut conditional = Vec::with_capacity(pulse_steps + 1);
    for k1 in 0..=pulse_steps {
        let mut psi = [Complex64::new(1.0, 0.0), z];
        let mut density = Vec::with_capacity(pulse_steps - k1 + 1);
        density.push(0.0);
        for k in k1..pulse_steps {
            let t = pulse.start + k as f64 * dt;
            psi = nojump_step(psi, t, dt, pulse, gamma);
            density.push(gamma * psi[1].norm_sqr());
        }
        let excited_at_end = psi[1].norm_sqr();
        let total = 1.0 - psi[0].norm_sqr();
        conditional.push(Conditional {
            density,
            excited_at_end,
            total,
        });
    }

    Ok(EmissionProbabilities {
        p0,
        p1,
        p2,
        pulse_start: pulse.start,
        pulse_end: pulse.end(),
        dt,
        first_density: first,
        second_density: second,
        max_trace_error,
        gamma,
        conditional,
    })
}

/// Memoized [`solve_emission`]; calibration sweeps reuse identical solves.
pub fn solve_emission_cached(
    pulse: &PulseShape,
    params: &EmitterParams,
    grid: &Grid,
) -> Result<Arc<EmissionProbabilities>, EmitterError> {
    static CACHE: OnceLock<Mutex<HashMap<[u64; 7], Arc<EmissionProbabilities>>>> = OnceLock::new();
    let kind = match pulse.kind {
        PulseKind::Square => 0,
        PulseKind::Gaussian => 1,
    };
    let key = [
        kind,
        pulse.peak_rabi.to_bits(),
        pulse.duration.to_bits(),
        pulse.start.to_bits(),
        params.gamma.to_bits(),
        grid.dt.to_bits(),
        grid.horizon.to_bits(),
    ];
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().expect("emitter cache poisoned").get(&key) {
        return Ok(hit.clone());
    }
    let em = Arc::new(solve_emission(pulse, params, grid)?);
    cache
        .lock()
        .expect("emitter cache poisoned")
        .insert(key, em.clone());
    Ok(em)
}

/// Detection interval [start, start + length) in ns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub length: f64,
}

impl Window {
    pub fn new(start: f64, length: f64) -> Self {
        Self { start, length }
    }

    pub fn end(&self) -> f64 {
        self.start + self.length
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end()
    }
}

/// Split of a PSB detection probability by whether the (earliest detected)
/// PSB photon arrived during or after the optical pulse.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Epochs {
    pub during: f64,
    pub after: f64,
}

impl Epochs {
    pub fn total(&self) -> f64 {
        self.during + self.after
    }
}

/// Conditional probabilities of photons falling inside their detection windows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowProbabilities {
    /// Single ZPL photon inside the ZPL window.
    pub dz1: f64,
    /// Single PSB photon inside the PSB window.
    pub db1: Epochs,
    /// Two ZPL photons, both inside.
    pub dz2: f64,
    /// Two ZPL photons, exactly one inside.
    pub dz3: f64,
    /// Two PSB photons, both inside. The earlier photon always falls during
    /// the pulse, so the split is by the epoch of the later one.
    pub db2: Epochs,
    /// Two PSB photons, exactly one inside (tagged by the detected one).
    pub db3: Epochs,
    /// One ZPL and one PSB photon, both inside (tagged by the PSB photon).
    pub dzb1: Epochs,
    /// ZPL photon outside, PSB photon inside.
    pub dzb2: Epochs,
    /// ZPL photon inside, PSB photon outside.
    pub dzb3: f64,
    pub zpl_window: Window,
    pub psb_window: Window,
    pub pulse_end: f64,
}

/// Masses of a photon-time distribution inside the relevant windows.
#[derive(Clone, Copy, Default)]
struct Masses {
    total: f64,
    zpl: f64,
    psb: Epochs,
}

impl Masses {
    fn add_point(&mut self, t: f64, w: f64, zw: &Window, bw: &Window, pulse_end: f64) {
        self.total += w;
        if zw.contains(t) {
            self.zpl += w;
        }
        if bw.contains(t) {
            if t < pulse_end {
                self.psb.during += w;
            } else {
                self.psb.after += w;
            }
        }
    }
}

pub fn window_probabilities(
    em: &EmissionProbabilities,
    zpl_window: Window,
    psb_window: Window,
    pulse_end: f64,
) -> Result<WindowProbabilities, EmitterError> {
    for w in [zpl_window, psb_window] {
        if w.length < 0.0 || w.start < em.pulse_start - 1e-9 || w.end() > em.horizon_end() + 1e-9 {
            return Err(EmitterError::WindowOutsideHorizon {
                start: w.start,
                end: w.end(),
            });
        }
    }
    // a window reaching the horizon also covers the final grid point
    let cover = |w: Window| {
        if w.end() >= em.horizon_end() - 1e-9 {
            Window::new(w.start, f64::INFINITY)
        } else {
            w
        }
    };
    let (zw, bw) = (&cover(zpl_window), &cover(psb_window));
    let n = em.first_density.len();
    let np = em.pulse_points();
    let tail_start = np - 1;

    // normalized tail shape after the pulse end: density γ e^{-γ(t - t_end)}
    let mut tail = Masses::default();
    for k in tail_start..n {
        let t = em.time(k);
        let w = if k == tail_start {
            0.5 * em.dt
        } else {
            em.weight(k)
        };
        tail.add_point(
            t,
            w * em.gamma * (-em.gamma * (t - em.time(tail_start))).exp(),
            zw,
            bw,
            pulse_end,
        );
    }

    let mut single = Masses::default();
    // joint accumulators over (first, second) photon times
    let (mut both_z, mut one_z, mut total2) = (0.0, 0.0, 0.0);
    let mut both_b = Epochs::default();
    let mut one_b = Epochs::default();
    let mut zb_both = Epochs::default();
    let mut zb_b_only = Epochs::default();
    let mut zb_z_only = 0.0;

    for k1 in 0..n {
        let t1 = em.time(k1);
        let g_total = em.second_photon_probability(k1);
        let f = em.first_density[k1] * em.weight(k1);
        single.add_point(t1, f * (1.0 - g_total), zw, bw, pulse_end);
        if k1 >= np || f == 0.0 {
            continue;
        }
        let cond = &em.conditional[k1];
        let mut m2 = Masses::default();
        let len = cond.density.len();
        for (i, d) in cond.density.iter().enumerate() {
            let w = if i == 0 || i + 1 == len {
                0.5 * em.dt
            } else {
                em.dt
            };
            m2.add_point(em.time(k1 + i), w * d, zw, bw, pulse_end);
        }
        let a = cond.excited_at_end;
        m2.total += a * tail.total;
        m2.zpl += a * tail.zpl;
        m2.psb.during += a * tail.psb.during;
        m2.psb.after += a * tail.psb.after;

        let mass = f;
        let z1 = zw.contains(t1);
        let b1 = bw.contains(t1);
        let ep1_during = t1 < pulse_end;
        total2 += mass * m2.total;
        // both ZPL
        if z1 {
            both_z += mass * m2.zpl;
            one_z += mass * (m2.total - m2.zpl);
        } else {
            one_z += mass * m2.zpl;
        }
        // both PSB
        let m2b = m2.psb.total();
        if b1 {
            let tag = |e: &mut Epochs, v: f64| {
                if ep1_during {
                    e.during += v
                } else {
                    e.after += v
                }
            };
            both_b.during += mass * m2.psb.during;
            both_b.after += mass * m2.psb.after;
            tag(&mut one_b, mass * (m2.total - m2b));
        } else {
            one_b.during += mass * m2.psb.during;
            one_b.after += mass * m2.psb.after;
        }
        // one ZPL, one PSB: average the two photon-type assignments
        let half = 0.5 * mass;
        // first photon ZPL, second PSB
        if z1 {
            zb_both.during += half * m2.psb.during;
            zb_both.after += half * m2.psb.after;
            zb_z_only += half * (m2.total - m2b);
        } else {
            zb_b_only.during += half * m2.psb.during;
            zb_b_only.after += half * m2.psb.after;
        }
        // first photon PSB, second ZPL
        if b1 {
            let (tz, tn) = (half * m2.zpl, half * (m2.total - m2.zpl));
            if ep1_during {
                zb_both.during += tz;
                zb_b_only.during += tn;
            } else {
                zb_both.after += tz;
                zb_b_only.after += tn;
            }
        } else {
            zb_z_only += half * m2.zpl;
        }
    }

    let s = |x: f64, tot: f64| if tot > 0.0 { x / tot } else { 0.0 };
    let se = |e: Epochs, tot: f64| Epochs {
        during: s(e.during, tot),
        after: s(e.after, tot),
    };
    Ok(WindowProbabilities {
        dz1: s(single.zpl, single.total),
        db1: se(single.psb, single.total),
        dz2: s(both_z, total2),
        dz3: s(one_z, total2),
        db2: se(both_b, total2),
        db3: se(one_b, total2),
        dzb1: se(zb_both, total2),
        dzb2: se(zb_b_only, total2),
        dzb3: s(zb_z_only, total2),
        zpl_window,
        psb_window,
        pulse_end,
    })
}

/// Spin-photon amplitudes after excitation: √(1−α)|1⟩ + √α(√P0|0⟩ + √P1|0,1⟩ + √P2|0,2⟩).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PostPulseState {
    pub dark: f64,
    pub bright_no_photon: f64,
    pub bright_one_photon: f64,
    pub bright_two_photons: f64,
}

impl PostPulseState {
    pub fn norm_sqr(&self) -> f64 {
        self.dark.powi(2)
            + self.bright_no_photon.powi(2)
            + self.bright_one_photon.powi(2)
            + self.bright_two_photons.powi(2)
    }
}

pub fn post_pulse_state(params: &EmitterParams, em: &EmissionProbabilities) -> PostPulseState {
    let a = params.alpha;
    let total = em.p0 + em.p1 + em.p2;
    PostPulseState {
        dark: (1.0 - a).sqrt(),
        bright_no_photon: (a * em.p0 / total).sqrt(),
        bright_one_photon: (a * em.p1 / total).sqrt(),
        bright_two_photons: (a * em.p2 / total).sqrt(),
    }
}

/// Chooses the pulse area in [0.8π, 1.2π] that gives the requested P2.
pub fn calibrate_pulse(
    target_p2: f64,
    template: &PulseShape,
    params: &EmitterParams,
    grid: &Grid,
) -> Result<PulseShape, EmitterError> {
    use std::f64::consts::PI;
    const TOL: f64 = 1e-3;
    const BISECT_TOL: f64 = 1e-4;
    let p2_at = |area: f64| -> Result<f64, EmitterError> {
        Ok(solve_emission_cached(&template.with_area(area), params, grid)?.p2)
    };
    let centre = p2_at(PI)?;
    if (centre - target_p2).abs() < TOL {
        return Ok(template.with_area(PI));
    }
    let (mut lo, mut hi) = (0.8 * PI, 1.2 * PI);
    let (p_lo, p_hi) = (p2_at(lo)?, p2_at(hi)?);
    if target_p2 < p_lo - TOL || target_p2 > p_hi + TOL {
        return Err(EmitterError::NonBracketing {
            target: target_p2,
            low: p_lo,
            high: p_hi,
        });
    }
    if target_p2 < centre {
        hi = PI;
    } else {
        lo = PI;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let p = p2_at(mid)?;
        if (p - target_p2).abs() < BISECT_TOL {
            return Ok(template.with_area(mid));
        }
        if p < target_p2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(template.with_area(0.5 * (lo + hi)))
}
