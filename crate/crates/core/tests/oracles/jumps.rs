//! Quantum-jump unraveling of the driven two-level emitter, used as an
//! independent check of the master-equation photon statistics.

use num_complex::Complex64;
use qnet_sim::emitter::PulseShape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact no-jump propagator exp(-i H_eff dt) for a constant drive.
fn propagator(omega: f64, gamma: f64, dt: f64) -> [[Complex64; 2]; 2] {
    let i = Complex64::new(0.0, 1.0);
    // M = -i H_eff dt with H_eff = [[0, Ω], [Ω, -iγ/2]]
    let a = Complex64::new(0.0, 0.0);
    let b = -i * omega * dt;
    let d = Complex64::new(-0.5 * gamma * dt, 0.0);
    let half_tr = (a + d) * 0.5;
    let s = (((a - d) * 0.5).powi(2) + b * b).sqrt();
    let (ch, sh_over) = if s.norm() < 1e-12 {
        (Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0))
    } else {
        (s.cosh(), s.sinh() / s)
    };
    let e = half_tr.exp();
    [
        [e * (ch + sh_over * (a - half_tr)), e * sh_over * b],
        [e * sh_over * b, e * (ch + sh_over * (d - half_tr))],
    ]
}

/// Fractions of trajectories emitting 0, 1 and 2 photons during a square
/// pulse and the subsequent decay, by quantum-jump unraveling.
pub fn jump_trajectories(pulse: &PulseShape, gamma: f64, n: usize, seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 0.002;
    let steps = (pulse.duration / dt).round() as usize;
    let u = propagator(pulse.peak_rabi, gamma, pulse.duration / steps as f64);
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let mut photons = 0;
        let mut psi = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        let mut r: f64 = rng.random();
        for _ in 0..steps {
            psi = [
                u[0][0] * psi[0] + u[0][1] * psi[1],
                u[1][0] * psi[0] + u[1][1] * psi[1],
            ];
            if psi[0].norm_sqr() + psi[1].norm_sqr() < r {
                photons += 1;
                psi = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
                r = rng.random();
                if photons == 2 {
                    break;
                }
            }
        }
        if photons < 2 && r > psi[0].norm_sqr() {
            photons += 1;
        }
        counts[photons] += 1;
    }
    counts.map(|c| c as f64 / n as f64)
}
