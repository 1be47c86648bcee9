mod common;

use common::{spec7, surface_state};
use nalgebra::{DMatrix, DVector};
use vflip_core::dynamics::{action_vars, g_star, h_distance, jstep, modal_momenta, propagate, ModalState, State};
use vflip_core::model::SystemSpec;
use vflip_core::rng::stream_rng;
use vflip_core::steering::{
    find_flip_time, flip_bound, recurrence_time, steer_to_gstar, steer_to_target,
    verify_local_covering, SteerError, SteerOptions,
};
use vflip_core::torus::metrics;

#[test]
fn planted_flip_time_is_recovered() {
    let spec = spec7();
    let psi = surface_state(&spec, 1);
    let t_star = 13.7;
    let target = modal_momenta(&spec, &propagate(&spec, &psi, t_star));
    let ft = find_flip_time(&spec, &psi, &target, 20.0, 20_000, 1e-8).unwrap();
    assert!(ft.achieved_distance <= 1e-8, "{ft:?}");
}

#[test]
fn planted_recurrence_is_recovered() {
    let spec = spec7();
    let psi = surface_state(&spec, 2);
    let t_star = 7000.25;
    let target = propagate(&spec, &psi, t_star);
    let s = recurrence_time(&spec, &psi, &target, 1e-8, 1e4, 1_000_000).unwrap();
    assert!(h_distance(&spec, &propagate(&spec, &psi, s), &target) <= 1e-8);
}

#[test]
fn single_oscillator_recurs_at_start_or_period() {
    let spec = SystemSpec::decompose(DMatrix::from_element(1, 1, 4.0), 0.5).unwrap();
    let psi = State::new(vec![0.3], vec![(1.0f64 - 4.0 * 0.09).sqrt()]).unwrap();
    let s = recurrence_time(&spec, &psi, &psi, 1e-9, 10.0, 1000).unwrap();
    let period = std::f64::consts::PI;
    let phase = s.rem_euclid(period);
    assert!(phase < 1e-6 || period - phase < 1e-6, "{s}");
}

#[test]
fn same_torus_pair_recurs_at_moderate_tolerance() {
    let spec = spec7();
    let psi = surface_state(&spec, 3);
    let mut m = ModalState::from_state(&spec, &psi);
    // Same actions, different phases.
    for k in 0..3 {
        let r = m.actions_sq(&spec)[k].sqrt();
        let phase = 1.0 + k as f64;
        m.pt[k] = r * phase.cos();
        m.qt[k] = r * phase.sin() / spec.omega()[k];
    }
    let target = m.to_state(&spec);
    let s = recurrence_time(&spec, &psi, &target, 0.05, 1e4, 200_000).unwrap();
    assert!(h_distance(&spec, &propagate(&spec, &psi, s), &target) <= 0.05);
}

#[test]
fn steering_reaches_gstar_within_uniform_flip_bound() {
    let spec = spec7();
    let bound = flip_bound(&spec) + 3;
    for seed in 0..10 {
        let psi = surface_state(&spec, 1000 + seed);
        let out = steer_to_gstar(&spec, &psi, 0.05, &SteerOptions::default()).unwrap();
        assert!(out.final_error <= 0.05);
        assert!(out.flips_used <= bound, "{} > {bound}", out.flips_used);
        // Search-quality floor on every accepted flip.
        let mut state = psi.clone();
        for (tau, after) in out.taus.iter().zip(&out.per_step_delta) {
            let r = action_vars(&spec, &state);
            let m = metrics(&spec, &r).unwrap();
            assert!(m.delta - after >= 0.5 * m.c_val * m.delta - 1e-12);
            state = jstep(&spec, &state, *tau);
        }
    }
}

#[test]
fn two_mode_start_with_unit_spread_needs_few_flips() {
    // Equal overlaps and an irrational frequency ratio.
    let s3 = 3f64.sqrt();
    let v = DMatrix::from_row_slice(2, 2, &[(1.0 + s3) / 2.0, (1.0 - s3) / 2.0, (1.0 - s3) / 2.0, (1.0 + s3) / 2.0]);
    let spec = SystemSpec::decompose(v, 0.5).unwrap();
    assert!((spec.beta()[0].abs() - spec.beta()[1].abs()).abs() < 1e-12);
    // All energy in the first mode: r = (1, 0), Delta = 2.
    let m = ModalState {
        qt: vec![0.0, 0.0],
        pt: vec![1.0, 0.0],
    };
    let psi = m.to_state(&spec);
    let out = steer_to_gstar(&spec, &psi, 0.05, &SteerOptions::default()).unwrap();
    let first = out.per_step_delta.iter().position(|d| *d <= 0.05).unwrap();
    assert!(first < 3, "{:?}", out.per_step_delta);
}

#[test]
fn gstar_needs_no_flips() {
    let spec = spec7();
    let out = steer_to_gstar(&spec, &g_star(&spec), 0.05, &SteerOptions::default()).unwrap();
    assert_eq!((out.flips_used, out.final_error), (0, 0.0));
}

#[test]
fn too_short_horizon_stalls() {
    let spec = spec7();
    let psi = surface_state(&spec, 8);
    let opts = SteerOptions {
        horizon: Some(1e-6),
        ..SteerOptions::default()
    };
    let err = steer_to_gstar(&spec, &psi, 0.05, &opts).unwrap_err();
    assert!(matches!(err, SteerError::StalledProgress { .. }), "{err}");
}

#[test]
fn two_point_steering() {
    let spec = spec7();
    let budget = 4 * (flip_bound(&spec) + 3);
    let opts = SteerOptions::default();
    for seed in 0..3 {
        let a = surface_state(&spec, 2000 + seed);
        let b = surface_state(&spec, 3000 + seed);
        let out = steer_to_target(&spec, &a, &b, 0.1, budget, &opts).unwrap();
        assert!(out.final_error_h <= 0.1);
        assert!(out.flips_used <= budget);
        assert!(h_distance(&spec, &out.replay(&spec, &a), &out.final_state) < 1e-9);
        assert!(out.taus.iter().all(|t| *t >= 0.0) && out.terminal_flow >= 0.0);
    }
    let a = surface_state(&spec, 1);
    let same = steer_to_target(&spec, &a, &a, 0.1, budget, &opts).unwrap();
    assert_eq!((same.flips_used, same.final_error), (0, 0.0));
    let to_g = steer_to_target(&spec, &a, &g_star(&spec), 0.1, budget, &opts).unwrap();
    let direct = steer_to_gstar(&spec, &a, 0.25 * 0.1 * spec.omega()[0].min(1.0) / 2f64.sqrt(), &opts).unwrap();
    assert_eq!(to_g.taus, direct.taus);
    let b = surface_state(&spec, 2);
    assert!(matches!(
        steer_to_target(&spec, &a, &b, 0.1, 0, &opts),
        Err(SteerError::BudgetExceeded { .. })
    ));
}

#[test]
fn covering_rank_grows_to_full() {
    let spec = spec7();
    let psi = surface_state(&spec, 4);
    let mut rng = stream_rng(7, 3);
    for k in 1..=5 {
        let out = verify_local_covering(&spec, &psi, k, 100, 20.0, &mut rng).unwrap();
        assert!(out.success(), "k={k}: {out:?}");
        assert!(!out.admissibility_warning);
    }
    assert!(matches!(
        verify_local_covering(&spec, &psi, 6, 1, 20.0, &mut rng),
        Err(SteerError::InvalidSteps { .. })
    ));
}

#[test]
fn decoupled_mode_caps_covering_rank() {
    let spec = SystemSpec::decompose(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])), 0.5).unwrap();
    let psi = State::new(vec![0.3, 0.2], vec![0.5, -0.4]).unwrap();
    let out = verify_local_covering(&spec, &psi, 3, 100, 20.0, &mut stream_rng(8, 3)).unwrap();
    assert!(out.achieved_rank <= 2);
    assert!(out.admissibility_warning);
}
