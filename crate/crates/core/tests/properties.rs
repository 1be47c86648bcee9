mod common;

use common::{random_spec, surface_state};
use proptest::prelude::*;
use vflip_core::dynamics::{
    action_vars, energy, flip, h_distance, inverse_jcompose, jcompose, jstep, propagate, State,
};
use vflip_core::liouville::ks_two_sample;
use vflip_core::model::{check_admissible, random_spd, SystemSpec};
use vflip_core::rng::stream_rng;
use vflip_core::steering::{steer_exact_n1, SteerOptions, steer_to_gstar};
use vflip_core::stochastic::{embedded_chain, simulate_pdmp, WaitingLaw};
use vflip_core::torus::{
    cube_contains, delta, metrics, optimal_flip_momentum, psi_map, r_star, random_unit_torus, rho,
    sample_cube,
};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn decomposition_invariants(n in 1usize..7, seed in 0u64..10_000) {
        let spec = SystemSpec::decompose(random_spd(n, seed, (0.5, 2.0)), 0.5).unwrap();
        let m = spec.modes();
        let v = spec.v_matrix();
        prop_assert!(spec.omega_sq().windows(2).all(|w| w[0] <= w[1]));
        let gram = m.transpose() * m;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((gram[(i, j)] - want).abs() < 1e-12);
            }
            let col = m.column(i);
            let resid = v * col - col * spec.omega_sq()[i];
            prop_assert!(resid.norm() < 1e-11);
            let first = col.iter().find(|x| x.abs() > 1e-12).unwrap();
            prop_assert!(*first > 0.0);
            prop_assert!((spec.omega()[i].powi(2) - spec.omega_sq()[i]).abs() < 1e-12);
            prop_assert!((spec.beta()[i] - m[(0, i)]).abs() == 0.0);
        }
        let beta_sq: f64 = spec.beta().iter().map(|b| b * b).sum();
        prop_assert!((beta_sq - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flow_is_a_group_and_conserves_actions(n in 1usize..7, seed in 0u64..1000, s in -30.0f64..30.0, t in -30.0f64..30.0) {
        let spec = random_spec(n, seed);
        let psi = surface_state(&spec, seed);
        let a = propagate(&spec, &propagate(&spec, &psi, s), t);
        let b = propagate(&spec, &psi, s + t);
        prop_assert!(h_distance(&spec, &a, &b) < 1e-10);
        prop_assert!((energy(&spec, &a) - 0.5).abs() < 1e-12);
        let r0 = action_vars(&spec, &psi);
        let r1 = action_vars(&spec, &a);
        for (x, y) in r0.as_slice().iter().zip(r1.as_slice()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn flip_is_an_energy_preserving_involution(n in 1usize..7, seed in 0u64..1000) {
        let spec = random_spec(n, seed);
        let psi = surface_state(&spec, seed);
        prop_assert_eq!(flip(&flip(&psi)), psi.clone());
        prop_assert_eq!(energy(&spec, &flip(&psi)), energy(&spec, &psi));
    }

    #[test]
    fn compositions_invert(n in 1usize..6, seed in 0u64..1000, taus in proptest::collection::vec(0.0f64..10.0, 0..6)) {
        let spec = random_spec(n, seed);
        let psi = surface_state(&spec, seed);
        let fwd = jcompose(&spec, &psi, &taus);
        prop_assert!((energy(&spec, &fwd) - 0.5).abs() < 1e-12);
        let back = inverse_jcompose(&spec, &fwd, &taus);
        prop_assert!(h_distance(&spec, &back, &psi) < 1e-10);
        let stepwise = taus.iter().fold(psi.clone(), |acc, &t| jstep(&spec, &acc, t));
        prop_assert_eq!(stepwise, fwd);
    }

    #[test]
    fn flip_map_preserves_total_action(n in 2usize..9, seed in 0u64..10_000) {
        let spec = random_spec(n, seed);
        let mut rng = stream_rng(seed, 3);
        let r = random_unit_torus(n, &mut rng);
        let p = sample_cube(&r, &mut rng);
        prop_assert!(cube_contains(&r, &p, 0.0));
        let out = psi_map(&spec, &r, &p).unwrap();
        prop_assert!((out.norm_sq() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_flip_contracts_exactly(n in 2usize..9, seed in 0u64..10_000) {
        let spec = random_spec(n, seed);
        let r = random_unit_torus(n, &mut stream_rng(seed, 3));
        let star = r_star(&spec);
        let m = metrics(&spec, &r).unwrap();
        let p = optimal_flip_momentum(&spec, &r).unwrap();
        for (pk, rk) in p.iter().zip(r.as_slice()) {
            prop_assert!(pk.abs() <= rk + 1e-12);
        }
        let out = psi_map(&spec, &r, &p).unwrap();
        let before = rho(&r, &star);
        let after = rho(&out, &star);
        prop_assert!((after - (1.0 - m.c_val) * before).abs() < 1e-9);
        let d_after = delta(&spec, &out).unwrap();
        prop_assert!(d_after <= (m.delta - 1.0).max(0.0) + 1e-9);
        prop_assert!(before <= m.delta + 1e-12);
    }

    #[test]
    fn exact_single_oscillator_steering(omega in 0.1f64..5.0, a in 0.0f64..6.3, b in 0.0f64..6.3, r in 0.01f64..3.0) {
        let spec = SystemSpec::decompose(nalgebra::DMatrix::from_element(1, 1, omega * omega), 0.5).unwrap();
        let psi = State::new(vec![r * a.sin() / omega], vec![r * a.cos()]).unwrap();
        let target = State::new(vec![r * b.sin() / omega], vec![r * b.cos()]).unwrap();
        let out = steer_exact_n1(omega, &psi, &target).unwrap();
        prop_assert!(out.t1 > 0.0 && out.t1 < out.t);
        let landed = propagate(&spec, &jstep(&spec, &psi, out.t1), out.t - out.t1);
        prop_assert!(landed.sub(&target).norm2() < 1e-12 * r.max(1.0) * omega.max(1.0 / omega));
    }

    #[test]
    fn ks_statistic_is_a_symmetric_distance(a in proptest::collection::vec(-5.0f64..5.0, 1..50), b in proptest::collection::vec(-5.0f64..5.0, 1..50)) {
        let d = ks_two_sample(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_two_sample(&b, &a).unwrap());
        prop_assert_eq!(ks_two_sample(&a, &a).unwrap(), 0.0);
    }
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn fixed_schedule_reproduces_composition(seed in 0u64..1000, taus in proptest::collection::vec(0.01f64..4.0, 1..12)) {
        let spec = random_spec(3, seed);
        let psi = surface_state(&spec, seed);
        let t_end = taus.iter().fold(0.0, |a, b| a + b);
        let law = WaitingLaw::FixedSchedule { taus: taus.clone() };
        let mut rng = stream_rng(seed, 0);
        let log = simulate_pdmp(&spec, &psi, t_end, &law, &mut rng, true, |_, _| {}).unwrap();
        prop_assert!(log.final_state.sub(&jcompose(&spec, &psi, &taus)).norm2() < 1e-12);
        let mut acc = 0.0;
        for (tau, t) in log.taus.iter().zip(&log.times) {
            acc += tau;
            prop_assert!((acc - t).abs() <= 1e-12 * acc.max(1.0));
        }
        // Right-continuity: the recorded state already has the flipped momentum.
        let states = log.states_at_events.unwrap();
        let before_first = propagate(&spec, &psi, taus[0]);
        prop_assert!((states[0].p[0] + before_first.p[0]).abs() < 1e-12);
    }

    #[test]
    fn embedded_chain_stays_on_surface(seed in 0u64..1000, rate in 0.2f64..5.0) {
        let spec = random_spec(4, seed);
        let psi = surface_state(&spec, seed);
        let law = WaitingLaw::Exponential { rate };
        let chain = embedded_chain(&spec, &psi, 500, &law, &mut stream_rng(seed, 0)).unwrap();
        prop_assert_eq!(chain.len(), 501);
        for s in &chain {
            prop_assert!((energy(&spec, s) - 0.5).abs() <= 1e-10 * 0.5);
        }
    }

    #[test]
    fn steering_results_replay(seed in 0u64..200) {
        let spec = common::spec7();
        let psi = surface_state(&spec, seed);
        let out = steer_to_gstar(&spec, &psi, 0.05, &SteerOptions::default()).unwrap();
        let replayed = out.replay(&spec, &psi);
        prop_assert!(h_distance(&spec, &replayed, &out.final_state) < 1e-9);
        prop_assert!(out.final_error <= 0.05);
        prop_assert_eq!(out.flips_used, out.taus.len());
        prop_assert!(out.taus.iter().all(|t| *t >= 0.0));
    }
}

#[test]
fn admissibility_is_deterministic() {
    let spec = common::spec7();
    assert_eq!(check_admissible(&spec, 1e-9, 20), check_admissible(&spec, 1e-9, 20));
}
