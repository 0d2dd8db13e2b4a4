use std::collections::HashMap;
use std::f64::consts::SQRT_2;
use std::sync::{Mutex, OnceLock};

use proptest::prelude::*;
use xxzbell_core::bell::objective_value;
use xxzbell_core::itebd::ground_state;
use xxzbell_core::linalg::{c, identity};
use xxzbell_core::mps::{averaged_reduced_density_matrix, product_mps, random_mps, reduced_density_matrix, Spin};
use xxzbell_core::optimize::{
    default_restarts, horodecki_m2, optimize, optimize_both_planes, optimize_both_planes_tensor, BellInput,
    OptimizerSettings,
};
use xxzbell_core::oracle::{bell_singlet, rdm_from_statevector};
use xxzbell_core::{
    BellError, CorrelationTensor, EvolutionSchedule, MpsState, Objective, PlaneConstraint, ReducedDensityMatrix,
    XxzCoupling,
};

const DELTAS: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 3.0];

fn state(delta: f64) -> MpsState {
    static CACHE: OnceLock<Mutex<HashMap<u64, MpsState>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(s) = cache.lock().unwrap().get(&delta.to_bits()) {
        return s.clone();
    }
    let s = ground_state(XxzCoupling::new(delta), 16, &EvolutionSchedule::default(), 1).unwrap().0;
    cache.lock().unwrap().insert(delta.to_bits(), s.clone());
    s
}

fn rdm(delta: f64, n: usize) -> ReducedDensityMatrix {
    averaged_reduced_density_matrix(&state(delta), n).unwrap()
}

fn singlet() -> ReducedDensityMatrix {
    rdm_from_statevector(&bell_singlet(), 0, 2).unwrap()
}

#[test]
fn singlet_in_the_xy_plane() {
    let rho = singlet();
    let r = optimize(Objective::Mermin, BellInput::Rdm(&rho), PlaneConstraint::Xy, 16, 3).unwrap();
    assert!((r.value - SQRT_2).abs() < 1e-6);
    assert!(r.converged && r.restarts_used == 16 && r.best_restart_index < 16);
    assert_eq!(r.constraint, PlaneConstraint::Xy);
    assert!(r.frame.a().iter().chain(r.frame.a_prime()).all(|v| v.z().abs() < 1e-12));
}

#[test]
fn xz_frames_stay_in_their_plane() {
    let rho = rdm(0.5, 3);
    let r = optimize(Objective::Svetlichny, BellInput::Rdm(&rho), PlaneConstraint::Xz, 8, 3).unwrap();
    assert!(r.frame.a().iter().chain(r.frame.a_prime()).all(|v| v.y().abs() < 1e-12));
}

#[test]
fn horodecki_examples() {
    assert!((horodecki_m2(&singlet()).unwrap() - SQRT_2).abs() < 1e-12);
    let up = reduced_density_matrix(&product_mps(Spin::Up), 2).unwrap();
    assert!((horodecki_m2(&up).unwrap() - 1.0).abs() < 1e-12);
    let mixed = ReducedDensityMatrix::from_matrix(identity(4) * c(0.25, 0.0)).unwrap();
    assert!(horodecki_m2(&mixed).unwrap().abs() < 1e-12);
    let three = reduced_density_matrix(&product_mps(Spin::Up), 3).unwrap();
    assert!(matches!(horodecki_m2(&three), Err(BellError::DimensionMismatch { .. })));
}

#[test]
fn restart_defaults() {
    assert_eq!(default_restarts(2), 64);
    assert_eq!(default_restarts(6), 64);
    assert_eq!(default_restarts(8), 128);
    assert_eq!(default_restarts(10), 128);
    let s = OptimizerSettings::default();
    assert_eq!((s.max_iterations, s.diameter_tol), (5000, 1e-8));
}

#[test]
fn ground_state_pairs_match_horodecki() {
    for delta in DELTAS {
        let rho = rdm(delta, 2);
        let exact = horodecki_m2(&rho).unwrap();
        let full = optimize(Objective::Mermin, BellInput::Rdm(&rho), PlaneConstraint::Full, 64, 1).unwrap();
        assert!((full.value - exact).abs() <= 1e-4, "Δ={delta}: {} vs {exact}", full.value);
        let planes = optimize_both_planes(Objective::Mermin, BellInput::Rdm(&rho), 64, 1).unwrap();
        assert!((planes.best().value - exact).abs() <= 1e-4, "Δ={delta}");
    }
}

#[test]
fn plane_dominance_for_four_sites() {
    let settings = OptimizerSettings::default();
    for delta in DELTAS {
        let tensor = CorrelationTensor::from_rdm(&rdm(delta, 4)).unwrap();
        for objective in Objective::ALL {
            let res = optimize_both_planes_tensor(objective, &tensor, default_restarts(4), 1, &settings).unwrap();
            let full = res.full.as_ref().expect("full search runs for n ≤ 4");
            let planes = res.xy.value.max(res.xz.value);
            assert!(full.value >= res.xy.value - 1e-9 && full.value >= res.xz.value - 1e-9);
            assert!((full.value - planes).abs() <= 1e-4, "Δ={delta} {objective}: full {} planes {planes}", full.value);
        }
    }
}

#[test]
fn isotropic_point_ties_resolve_to_xy() {
    let rho = rdm(1.0, 4);
    let res = optimize_both_planes(Objective::Mermin, BellInput::Rdm(&rho), 64, 1).unwrap();
    assert!((res.xy.value - res.xz.value).abs() <= 1e-10);
    assert_eq!(res.best().constraint, PlaneConstraint::Xy);
}

#[test]
fn determinism_and_restart_monotonicity() {
    let rho = rdm(0.5, 4);
    let input = BellInput::Rdm(&rho);
    for objective in Objective::ALL {
        let a = optimize(objective, input, PlaneConstraint::Xz, 10, 99).unwrap();
        let b = optimize(objective, input, PlaneConstraint::Xz, 10, 99).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.frame, b.frame);
        assert_eq!(a.best_restart_index, b.best_restart_index);
        let mut previous = f64::NEG_INFINITY;
        for restarts in [1, 2, 5, 10, 20] {
            let r = optimize(objective, input, PlaneConstraint::Xz, restarts, 99).unwrap();
            assert!(r.value >= previous - 1e-12, "{objective} R={restarts}");
            previous = r.value;
        }
    }
}

#[test]
fn mps_input_matches_rdm_input() {
    let s = state(2.0);
    let rho = reduced_density_matrix(&s, 3).unwrap();
    let a = optimize(Objective::Mermin, BellInput::Mps { state: &s, n: 3 }, PlaneConstraint::Xy, 4, 2).unwrap();
    let b = optimize(Objective::Mermin, BellInput::Rdm(&rho), PlaneConstraint::Xy, 4, 2).unwrap();
    assert!((a.value - b.value).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn reported_values_are_achieved(seed in any::<u64>(), n in 2usize..=4, d in 1usize..4, xz in any::<bool>(), svet in any::<bool>()) {
        let rho = reduced_density_matrix(&random_mps(d, seed).unwrap(), n).unwrap();
        let objective = if svet { Objective::Svetlichny } else { Objective::Mermin };
        let constraint = if xz { PlaneConstraint::Xz } else { PlaneConstraint::Xy };
        let r = optimize(objective, BellInput::Rdm(&rho), constraint, 4, seed).unwrap();
        let again = objective_value(objective, &rho, &r.frame).unwrap();
        prop_assert!((again - r.value).abs() <= 1e-9);
        prop_assert!(r.value <= 2f64.powf((n as f64 - 1.0) / 2.0) + 1e-9);
    }
}
