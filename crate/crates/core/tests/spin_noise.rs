use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use qnet_sim::hilbert::gates;
use qnet_sim::spin_noise::*;
use qnet_sim::{Ket, State};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn plus() -> State {
    Cardinal::PlusX.ket("m").to_state()
}

fn bloch_length(s: &State) -> f64 {
    let b = s.bloch_vector().unwrap();
    (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt()
}

fn stored(n: u64, fit: &DecayFit) -> State {
    plus()
        .apply_channel(&storage_channel(fit).unwrap(), &["m"])
        .unwrap()
        .apply_channel(&memory_dephasing_channel(n, fit).unwrap(), &["m"])
        .unwrap()
}

#[test]
fn stored_superposition_follows_memory_fit() {
    let fit = MEMORY_WITH_DECOUPLING;
    assert_abs_diff_eq!(bloch_length(&stored(0, &fit)), 0.875, epsilon = 1e-12);
    assert_abs_diff_eq!(
        bloch_length(&stored(5327, &fit)),
        0.875 / std::f64::consts::E,
        epsilon = 1e-6
    );
    for k in 0..20 {
        let n = 250 * k;
        assert_abs_diff_eq!(
            bloch_length(&stored(n, &fit)),
            fit.value(n as f64),
            epsilon = 1e-6
        );
    }
    let without = MEMORY_WITHOUT_DECOUPLING;
    assert!(bloch_length(&stored(1000, &without)) < bloch_length(&stored(1000, &fit)));
    assert!(fit.scale / without.scale > 6.0);
}

#[test]
fn memory_dephasing_keeps_populations() {
    let s = State::basis("m", 2, 1).apply_channel(
        &memory_dephasing_channel(4000, &MEMORY_WITH_DECOUPLING).unwrap(),
        &["m"],
    );
    assert_abs_diff_eq!(s.unwrap().matrix()[(1, 1)].re, 1.0, epsilon = 1e-15);
}

#[test]
fn decoupling_reproduces_both_fits() {
    for fits in [
        DecouplingFits::ALICE,
        DecouplingFits::BOB,
        DecouplingFits::CHARLIE,
    ] {
        for k in 0..20 {
            let t = 0.05 * k as f64;
            let ch = decoupling_channel(t, &fits).unwrap();
            let fid = |c: Cardinal| {
                let ket = c.ket("q");
                ket.to_state()
                    .apply_channel(&ch, &["q"])
                    .unwrap()
                    .fidelity(&ket)
                    .unwrap()
            };
            let eigen = (fid(Cardinal::PlusZ) + fid(Cardinal::MinusZ)) / 2.0;
            let sup = Cardinal::ALL[..4].iter().map(|c| fid(*c)).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(eigen, fits.eigen.value(t), epsilon = 1e-6);
            assert_abs_diff_eq!(sup, fits.superposition.value(t), epsilon = 1e-6);
        }
    }
}

#[test]
fn decoupling_limits() {
    let alice = DecouplingFits::ALICE;
    let at = |t: f64, c: Cardinal| {
        let ket = c.ket("q");
        ket.to_state()
            .apply_channel(&decoupling_channel(t, &alice).unwrap(), &["q"])
            .unwrap()
            .fidelity(&ket)
            .unwrap()
    };
    assert_abs_diff_eq!(at(0.0, Cardinal::PlusZ), 0.9930, epsilon = 1e-12);
    assert_abs_diff_eq!(at(0.0, Cardinal::PlusX), 0.9889, epsilon = 1e-12);
    assert_abs_diff_eq!(
        at(alice.eigen.scale, Cardinal::MinusZ),
        0.4930 / std::f64::consts::E + 0.5,
        epsilon = 1e-6
    );
    assert_abs_diff_eq!(at(100.0, Cardinal::PlusY), 0.5, epsilon = 1e-9);
}

#[test]
fn infeasible_decoupling_pair_is_rejected() {
    // superpositions that stay coherent while eigenstates fully relax
    let fits = DecouplingFits {
        eigen: DecayFit::new(0.5, 0.01, 1.0, 0.5),
        superposition: DecayFit::new(0.5, 100.0, 1.0, 0.5),
    };
    assert!(matches!(
        decoupling_channel(1.0, &fits),
        Err(SpinNoiseError::Infeasible { .. })
    ));
    assert!(decoupling_channel(-1.0, &DecouplingFits::BOB).is_err());
}

#[test]
fn depolarizing_examples() {
    let zero = State::basis("q", 2, 0);
    let id = zero
        .apply_channel(&depolarizing(0.0).unwrap(), &["q"])
        .unwrap();
    assert!(id.matrix().max_abs_diff(zero.matrix()) < 1e-15);
    let mixed = zero
        .apply_channel(&depolarizing(1.0).unwrap(), &["q"])
        .unwrap();
    assert!(
        mixed
            .matrix()
            .max_abs_diff(State::maximally_mixed("q", 2).matrix())
            < 1e-15
    );

    let bell = Ket::phi_plus("a", "b");
    let noisy = bell
        .to_state()
        .apply_channel(&depolarizing(0.12).unwrap(), &["b"])
        .unwrap();
    assert_abs_diff_eq!(
        noisy.fidelity(&bell).unwrap(),
        1.0 - 0.12 * 0.75,
        epsilon = 1e-12
    );
    assert!(depolarizing(1.2).is_err());
}

#[test]
fn ionization_replaces_only_the_target() {
    let bell = Ket::phi_plus("a", "b").to_state();
    let ion = ionize(&bell, "a").unwrap();
    assert_eq!(ion.labels(), bell.labels());
    let expected = State::maximally_mixed("a", 2)
        .tensor(&State::maximally_mixed("b", 2))
        .unwrap();
    assert!(ion.matrix().max_abs_diff(expected.matrix()) < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let hits = (0..100_000)
        .filter(|_| ionization_event(0.007, &mut rng))
        .count() as f64
        / 1e5;
    assert!((hits - 0.007).abs() < 3.0 * (0.007f64 * 0.993 / 1e5).sqrt() + 1e-4);
    assert!(!(0..1000).any(|_| ionization_event(0.0, &mut rng)));
}

#[test]
fn input_state_preparation() {
    for c in Cardinal::ALL {
        let s = prepare_input_state(c, "q", 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(s.fidelity(&c.ket("q")).unwrap(), 1.0, epsilon = 1e-12);
        let b = s.bloch_vector().unwrap();
        for (x, y) in b.iter().zip(c.bloch()) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }
    }
    // population-transfer coefficient from the matrix itself
    let p_init = 1.2e-3;
    let z = prepare_input_state(Cardinal::PlusZ, "q", p_init, 0.0).unwrap();
    let transfer = z.matrix()[(1, 1)].re / p_init;
    assert_abs_diff_eq!(
        z.fidelity(&Cardinal::PlusZ.ket("q")).unwrap(),
        1.0 - p_init * transfer,
        epsilon = 1e-15
    );

    let avg = Cardinal::ALL
        .iter()
        .map(|c| {
            prepare_input_state(*c, "q", 1.2e-3, 8e-3)
                .unwrap()
                .fidelity(&c.ket("q"))
                .unwrap()
        })
        .sum::<f64>()
        / 6.0;
    assert!((avg - 0.995).abs() < 1e-3, "{avg}");
    assert_eq!("-y".parse::<Cardinal>().unwrap(), Cardinal::MinusY);
}

#[test]
fn perfect_bar_readout_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for bit in 0..2 {
        let r = bar_readout(
            &State::basis("m", 2, bit),
            2,
            &ReadoutParams::PERFECT,
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.assigned as usize, bit);
        assert!(r.consistent);
        assert_eq!(r.pattern, vec![bit as u8, 1 - bit as u8]);
    }
    let c = bar_model_curves(&ReadoutParams::PERFECT, 5).unwrap();
    assert!(c.fidelity.iter().chain(&c.accepted).all(|v| *v == 1.0));
}

// Values from an independent enumeration over (memory bit, assignment,
// consistency) written outside this crate.
const BOB_FIDELITY: [f64; 5] = [
    0.931272,
    0.9923743663857613,
    0.995731872800551,
    0.9959866515539441,
    0.9959894846996258,
];
const BOB_ACCEPTED: [f64; 5] = [
    1.0,
    0.875902625,
    0.8159664375,
    0.7616178292409452,
    0.7119133548976757,
];
const CHARLIE_FIDELITY: [f64; 5] = [
    0.8984708000000001,
    0.981691969970286,
    0.9898254136748179,
    0.9907768666243322,
    0.9908018579563027,
];
const CHARLIE_ACCEPTED: [f64; 5] = [
    1.0,
    0.8189596249,
    0.727675341101,
    0.6503608494819483,
    0.5826350154613043,
];

#[test]
fn bar_curves_match_reference_enumeration() {
    for (params, fid, acc) in [
        (ReadoutParams::BOB, BOB_FIDELITY, BOB_ACCEPTED),
        (ReadoutParams::CHARLIE, CHARLIE_FIDELITY, CHARLIE_ACCEPTED),
    ] {
        let c = bar_model_curves(&params, 5).unwrap();
        for r in 0..5 {
            assert_abs_diff_eq!(c.fidelity[r], fid[r], epsilon = 1e-12);
            assert_abs_diff_eq!(c.accepted[r], acc[r], epsilon = 1e-12);
        }
    }
}

#[test]
fn bar_reference_points() {
    let bob = bar_model_curves(&ReadoutParams::BOB, 5).unwrap();
    assert!((1.0 - bob.fidelity[0] - 0.06).abs() < 0.015);
    assert!(1.0 - bob.fidelity[1] < 0.01);
    assert!((bob.fidelity[1] - 0.992).abs() < 0.004);
    assert!((bob.accepted[1] - 0.88).abs() < 0.03);
    for r in 2..5 {
        let ratio = bob.accepted[r] / bob.accepted[r - 2];
        assert!((ratio - 0.9).abs() < 0.1, "ratio {ratio}");
    }
    let charlie = bar_model_curves(&ReadoutParams::CHARLIE, 2).unwrap();
    assert!((charlie.fidelity[1] - 0.981).abs() < 0.004);
    assert!(bar_model_curves(&ReadoutParams::BOB, 6).is_err());
}

#[test]
fn sampled_bar_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let shots = 100_000;
    for params in [ReadoutParams::BOB, ReadoutParams::CHARLIE] {
        let table = bar_outcome_probabilities(&params, 3).unwrap();
        for m0 in 0..2usize {
            let mut counts = [[0usize; 2]; 2];
            let init = State::basis("m", 2, m0);
            for _ in 0..shots {
                let r = bar_readout(&init, 3, &params, &mut rng).unwrap();
                counts[r.assigned as usize][r.consistent as usize] += 1;
            }
            for a in 0..2 {
                for c in 0..2 {
                    let p = table[m0][a][c];
                    let se = (p * (1.0 - p) / shots as f64).sqrt();
                    let f = counts[a][c] as f64 / shots as f64;
                    assert!(
                        (f - p).abs() <= 3.0 * se + 1e-4,
                        "m0={m0} a={a} c={c}: {f} vs {p}"
                    );
                }
            }
        }
    }
}

fn arb_readout() -> impl Strategy<Value = ReadoutParams> {
    (
        0.85..1.0f64,
        0.85..1.0f64,
        0.0..0.02f64,
        0.0..0.02f64,
        0.0..0.06f64,
    )
        .prop_map(|(f0, f1, init, flip, map)| ReadoutParams {
            comm_f0: f0,
            comm_f1: f1,
            initial_flip: init,
            block_flip: flip,
            map_error: map,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn bar_acceptance_never_grows(params in arb_readout()) {
        let c = bar_model_curves(&params, 5).unwrap();
        for r in 1..5 {
            prop_assert!(c.accepted[r] <= c.accepted[r - 1] + 1e-12);
        }
        let t = bar_outcome_probabilities(&params, 3).unwrap();
        for m0 in 0..2 {
            let total: f64 = t[m0].iter().flatten().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dephasing_ledger_composes_to_cumulative_channel(n in 0u64..4000, m in 0u64..4000, theta in 0.0..3.1f64) {
        let fit = MEMORY_WITH_DECOUPLING;
        let state = Ket::basis("q", 2, 0).apply(&gates::rotation([1.0, 0.0, 0.0], theta), &["q"]).unwrap().to_state();
        let mut ledger = DephasingLedger::new(fit);
        let stepped = state
            .apply_channel(&ledger.advance(n).unwrap(), &["q"]).unwrap()
            .apply_channel(&ledger.advance(m).unwrap(), &["q"]).unwrap();
        let once = state.apply_channel(&memory_dephasing_channel(n + m, &fit).unwrap(), &["q"]).unwrap();
        prop_assert!(stepped.matrix().max_abs_diff(once.matrix()) < 1e-9);
        prop_assert_eq!(ledger.attempts(), n + m);
    }

    #[test]
    fn noise_channels_are_trace_preserving(t in 0.0..2.0f64, n in 0u64..10_000, p in 0.0..1.0f64) {
        for fits in [DecouplingFits::ALICE, DecouplingFits::BOB, DecouplingFits::CHARLIE] {
            let ch = decoupling_channel(t, &fits).unwrap();
            prop_assert!(State::maximally_mixed("q", 2).apply_channel(&ch, &["q"]).unwrap().checked().is_ok());
        }
        let chans = [memory_dephasing_channel(n, &MEMORY_WITH_DECOUPLING).unwrap(), depolarizing(p).unwrap()];
        for ch in chans {
            let out = plus().apply_channel(&ch, &["m"]).unwrap();
            prop_assert!((out.trace() - 1.0).abs() < 1e-12);
        }
    }
}
