//! Fock-space oracle for the heralded link. Each node is a pure state over
//! spin ⊗ photonic modes, loss is a beam-splitter unitary built from its
//! generator, and the central station is a 50:50 beam splitter followed by
//! photon-number projection.

use std::collections::HashMap;

use num_complex::Complex64;
use qnet_sim::emitter::{Epochs, Window, WindowProbabilities};
use qnet_sim::hilbert::eigh;
use qnet_sim::photonic::{Epoch, FlagClass, HeraldedLink, LinkParams, NodeOptics};
use qnet_sim::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const SPIN: usize = 0;
const ZPL: usize = 1;
const ZPL_LOST: usize = 2;
const ZPL_OUT: usize = 3;
const PSB_DURING: usize = 4;
const PSB_AFTER: usize = 5;
const PSB_LOST_DURING: usize = 6;
const PSB_LOST_AFTER: usize = 7;
const PSB_OUT: usize = 8;
const NODE_MODES: usize = 9;

type Fock = HashMap<Vec<u8>, Complex64>;

const PAIRS: [(u8, u8); 6] = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)];

fn pair_index(p: (u8, u8)) -> usize {
    PAIRS
        .iter()
        .position(|q| *q == p)
        .expect("at most two photons per mode pair")
}

/// exp(θ(a†b − ab†)) restricted to at most two photons, by Taylor series.
fn beam_splitter(theta: f64) -> Matrix {
    let mut gen = Matrix::zeros(6, 6);
    for (col, &(na, nb)) in PAIRS.iter().enumerate() {
        if nb > 0 && na < 2 {
            // a†b
            let amp = (nb as f64).sqrt() * (na as f64 + 1.0).sqrt();
            gen[(pair_index((na + 1, nb - 1)), col)] += Complex64::new(theta * amp, 0.0);
        }
        if na > 0 && nb < 2 {
            // −ab†
            let amp = (na as f64).sqrt() * (nb as f64 + 1.0).sqrt();
            gen[(pair_index((na - 1, nb + 1)), col)] -= Complex64::new(theta * amp, 0.0);
        }
    }
    let mut term = Matrix::identity(6);
    let mut sum = Matrix::identity(6);
    for k in 1..60 {
        term = (&term * &gen).scale_real(1.0 / k as f64);
        sum = &sum + &term;
    }
    sum
}

fn apply_pair(state: &Fock, i: usize, j: usize, u: &Matrix) -> Fock {
    let mut out = Fock::new();
    for (key, amp) in state {
        let col = pair_index((key[i], key[j]));
        for (row, &(ma, mb)) in PAIRS.iter().enumerate() {
            let c = u[(row, col)];
            if c.norm() == 0.0 {
                continue;
            }
            let mut k = key.clone();
            k[i] = ma;
            k[j] = mb;
            *out.entry(k).or_default() += amp * c;
        }
    }
    out
}

/// Pre-loss occupation of one emission event.
#[derive(Default, Clone, Copy)]
struct Occupation {
    zpl_in: u8,
    zpl_out: u8,
    psb_during: u8,
    psb_after: u8,
    psb_out: u8,
}

fn node_state(n: &NodeOptics) -> Fock {
    let w = &n.windows;
    let z = n.p_zpl;
    let b = 1.0 - z;
    let mut probs: HashMap<Vec<u8>, f64> = HashMap::new();
    let mut push = |spin: u8, p: f64, o: Occupation| {
        let mut key = vec![0u8; NODE_MODES];
        key[SPIN] = spin;
        key[ZPL] = o.zpl_in;
        key[ZPL_OUT] = o.zpl_out;
        key[PSB_DURING] = o.psb_during;
        key[PSB_AFTER] = o.psb_after;
        key[PSB_OUT] = o.psb_out;
        *probs.entry(key).or_default() += p;
    };
    let occ = |zi, zo, bd, ba, bo| Occupation {
        zpl_in: zi,
        zpl_out: zo,
        psb_during: bd,
        psb_after: ba,
        psb_out: bo,
    };
    let a = n.alpha;
    push(1, 1.0 - a, occ(0, 0, 0, 0, 0));
    push(0, a * n.p0, occ(0, 0, 0, 0, 0));

    let one = a * n.p1;
    push(0, one * z * w.dz1, occ(1, 0, 0, 0, 0));
    push(0, one * z * (1.0 - w.dz1), occ(0, 1, 0, 0, 0));
    push(0, one * b * w.db1.during, occ(0, 0, 1, 0, 0));
    push(0, one * b * w.db1.after, occ(0, 0, 0, 1, 0));
    push(0, one * b * (1.0 - w.db1.total()), occ(0, 0, 0, 0, 1));

    let two = a * n.p2;
    let zz = two * z * z;
    push(0, zz * w.dz2, occ(2, 0, 0, 0, 0));
    push(0, zz * w.dz3, occ(1, 1, 0, 0, 0));
    push(0, zz * (1.0 - w.dz2 - w.dz3), occ(0, 2, 0, 0, 0));
    let bb = two * b * b;
    push(0, bb * w.db2.during, occ(0, 0, 2, 0, 0));
    push(0, bb * w.db2.after, occ(0, 0, 1, 1, 0));
    push(0, bb * w.db3.during, occ(0, 0, 1, 0, 1));
    push(0, bb * w.db3.after, occ(0, 0, 0, 1, 1));
    push(
        0,
        bb * (1.0 - w.db2.total() - w.db3.total()),
        occ(0, 0, 0, 0, 2),
    );
    let zb = two * 2.0 * z * b;
    push(0, zb * w.dzb1.during, occ(1, 0, 1, 0, 0));
    push(0, zb * w.dzb1.after, occ(1, 0, 0, 1, 0));
    push(0, zb * w.dzb2.during, occ(0, 1, 1, 0, 0));
    push(0, zb * w.dzb2.after, occ(0, 1, 0, 1, 0));
    push(0, zb * w.dzb3, occ(1, 0, 0, 0, 1));
    push(
        0,
        zb * (1.0 - w.dzb1.total() - w.dzb2.total() - w.dzb3),
        occ(0, 1, 0, 0, 1),
    );

    let mut state: Fock = probs
        .into_iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(k, p)| (k, Complex64::new(p.sqrt(), 0.0)))
        .collect();
    state = apply_pair(
        &state,
        ZPL,
        ZPL_LOST,
        &beam_splitter(n.eta_zpl.sqrt().acos()),
    );
    state = apply_pair(
        &state,
        PSB_DURING,
        PSB_LOST_DURING,
        &beam_splitter(n.eta_psb.sqrt().acos()),
    );
    apply_pair(
        &state,
        PSB_AFTER,
        PSB_LOST_AFTER,
        &beam_splitter(n.eta_psb.sqrt().acos()),
    )
}

fn joint(a: &Fock, b: &Fock, extra: usize) -> Fock {
    let mut out = Fock::new();
    for (ka, va) in a {
        for (kb, vb) in b {
            let mut k = ka.clone();
            k.extend_from_slice(kb);
            k.extend(std::iter::repeat_n(0, extra));
            out.insert(k, va * vb);
        }
    }
    out
}

fn flag_of(key: &[u8], offset: usize) -> Option<Epoch> {
    if key[offset + PSB_DURING] > 0 {
        Some(Epoch::During)
    } else if key[offset + PSB_AFTER] > 0 {
        Some(Epoch::After)
    } else {
        None
    }
}

/// Traces out everything but the spins for terms with `want` photons summed
/// over the `plus` and `minus` detector modes, split by flag class. Detector
/// modes stay in the environment key so time bins remain distinguishable.
fn herald_density(state: &Fock, plus: &[usize], minus: &[usize], want: (u8, u8)) -> Vec<Matrix> {
    let mut env: HashMap<Vec<u8>, [Complex64; 4]> = HashMap::new();
    for (key, amp) in state {
        let np: u8 = plus.iter().map(|&m| key[m]).sum();
        let nm: u8 = minus.iter().map(|&m| key[m]).sum();
        if (np, nm) != want {
            continue;
        }
        let idx = 2 * key[SPIN] as usize + key[NODE_MODES + SPIN] as usize;
        let mut e: Vec<u8> = key.clone();
        e[SPIN] = 0;
        e[NODE_MODES + SPIN] = 0;
        env.entry(e).or_default()[idx] += amp;
    }
    let mut out = vec![Matrix::zeros(4, 4); FlagClass::COUNT];
    for (e, v) in env {
        let class = FlagClass(flag_of(&e, 0), flag_of(&e, NODE_MODES)).index();
        out[class] = &out[class] + &Matrix::outer(&v, &v);
    }
    out
}

fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let jac = Matrix::from_fn(n, n, |i, j| {
        if i.abs_diff(j) == 1 {
            Complex64::new((i.max(j) as f64 / 2.0).sqrt(), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let (vals, vecs) = eigh(&jac);
    vals.iter()
        .enumerate()
        .map(|(k, &x)| (x, std::f64::consts::PI.sqrt() * vecs[(0, k)].norm_sqr()))
        .collect()
}

/// Oracle herald matrices for output ports (first, second), per flag class.
pub fn oracle(link: &LinkParams) -> [Vec<Matrix>; 2] {
    let a = node_state(&link.nodes[0]);
    let b = node_state(&link.nodes[1]);
    let za = ZPL;
    let zb = NODE_MODES + ZPL;
    let bs = beam_splitter(std::f64::consts::FRAC_PI_4);
    let pd = link.dark_probability();
    let sqrt_v = link.visibility.sqrt();
    let sigma = link.phase_sigma_deg.to_radians();

    // the beam splitter conserves photon number and only totals 0 and 1 herald
    let mut indist = joint(&a, &b, 0);
    indist.retain(|k, _| k[za] + k[zb] <= 1);
    let mut acc = [vec![Matrix::zeros(4, 4); 9], vec![Matrix::zeros(4, 4); 9]];
    let mut add = |port: usize, ms: Vec<Matrix>, w: f64| {
        for (c, m) in ms.into_iter().enumerate() {
            acc[port][c] = &acc[port][c] + &m.scale_real(w);
        }
    };
    for (x, wq) in gauss_hermite(30) {
        let phi = std::f64::consts::SQRT_2 * sigma * x;
        let w = wq / std::f64::consts::PI.sqrt();
        let shifted: Fock = indist
            .iter()
            .map(|(k, v)| {
                (
                    k.clone(),
                    v * Complex64::from_polar(1.0, phi * k[zb] as f64),
                )
            })
            .collect();
        let out = apply_pair(&shifted, za, zb, &bs);
        let weight = (1.0 - pd) * (1.0 - pd) * sqrt_v * w;
        add(0, herald_density(&out, &[za], &[zb], (1, 0)), weight);
        add(1, herald_density(&out, &[za], &[zb], (0, 1)), weight);
    }
    // distinguishable photons: each ZPL mode meets a vacuum in its own time bin
    let dist = joint(&a, &b, 2);
    let va = 2 * NODE_MODES;
    let vb = va + 1;
    let out = apply_pair(&apply_pair(&dist, za, va, &bs), vb, zb, &bs);
    let weight = (1.0 - pd) * (1.0 - pd) * (1.0 - sqrt_v);
    add(
        0,
        herald_density(&out, &[za, vb], &[va, zb], (1, 0)),
        weight,
    );
    add(
        1,
        herald_density(&out, &[za, vb], &[va, zb], (0, 1)),
        weight,
    );
    // dark count on one detector with no photon anywhere
    let out = apply_pair(&indist, za, zb, &bs);
    let dark = herald_density(&out, &[za], &[zb], (0, 0));
    add(0, dark.clone(), pd * (1.0 - pd));
    add(1, dark, pd * (1.0 - pd));
    acc
}

fn split(rng: &mut ChaCha8Rng, parts: usize, total: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..=parts).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = raw.iter().sum();
    raw[..parts].iter().map(|x| total * x / s).collect()
}

fn epochs(v: &[f64]) -> Epochs {
    Epochs {
        during: v[0],
        after: v[1],
    }
}

fn random_node(rng: &mut ChaCha8Rng) -> NodeOptics {
    let p = split(rng, 3, 1.0 + 1e-12);
    let (p0, p2) = (0.1 * p[0], 0.5 * p[2]);
    let db1 = split(rng, 2, 1.0);
    let zz = split(rng, 2, 1.0);
    let bb = split(rng, 4, 1.0);
    let zb = split(rng, 5, 1.0);
    NodeOptics {
        alpha: rng.random_range(0.02..0.4),
        p_zpl: rng.random_range(0.05..0.6),
        p0,
        p1: 1.0 - p0 - p2,
        p2,
        windows: WindowProbabilities {
            dz1: rng.random_range(0.3..1.0),
            db1: epochs(&db1),
            dz2: zz[0],
            dz3: zz[1],
            db2: epochs(&bb[0..2]),
            db3: epochs(&bb[2..4]),
            dzb1: epochs(&zb[0..2]),
            dzb2: epochs(&zb[2..4]),
            dzb3: zb[4],
            zpl_window: Window::new(0.0, 15.0),
            psb_window: Window::new(0.0, 40.0),
            pulse_end: 6.0,
        },
        eta_zpl: rng.random_range(0.05..0.95),
        eta_psb: rng.random_range(0.05..0.95),
    }
}

pub fn random_link(rng: &mut ChaCha8Rng) -> LinkParams {
    LinkParams {
        nodes: [random_node(rng), random_node(rng)],
        visibility: rng.random_range(0.5..1.0),
        phase_sigma_deg: rng.random_range(0.0..40.0),
        dark_rate_hz: rng.random_range(0.0..0.05) / 15e-9,
        zpl_window_ns: 15.0,
        psb_rejection: rng.random(),
    }
}

/// Largest deviation between the branch model and the oracle over both
/// detectors and all flag classes, relative to the total herald probability.
/// The oracle's detector labels may be swapped relative to the herald signs.
pub fn relative_deviation(link: &LinkParams, model: &HeraldedLink) -> f64 {
    let fock = oracle(link);
    let total = model.success_probability() + model.rejected_probability;
    let diff = |port: usize, sign: usize| {
        (0..FlagClass::COUNT)
            .map(|c| fock[port][c].max_abs_diff(&model.heralds[sign].by_flag[c]))
            .fold(0.0, f64::max)
            / total
    };
    let direct = diff(0, 0).max(diff(1, 1));
    let swapped = diff(1, 0).max(diff(0, 1));
    direct.min(swapped)
}
