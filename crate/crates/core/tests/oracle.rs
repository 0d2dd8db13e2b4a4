use std::f64::consts::{FRAC_1_SQRT_2, PI};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xxzbell_core::bell::mk_operators;
use xxzbell_core::itebd::ground_state;
use xxzbell_core::linalg::{c, direction_operator, hermitian_eig, kron, max_abs_diff, trace_distance};
use xxzbell_core::mps::{averaged_reduced_density_matrix, Spin};
use xxzbell_core::optimize::{optimize, BellInput};
use xxzbell_core::oracle::{
    bell_singlet, exact_ground_state, extrapolated_energy_per_site, ghz_state, mk_bruteforce, product_state,
    rdm_from_statevector, ring_energy, MAX_ED_SITES,
};
use xxzbell_core::{
    CMatrix, EvolutionSchedule, MeasurementFrame, Objective, OracleError, PlaneConstraint, StateVector, UnitVector3,
    XxzCoupling,
};

/// Ground energy of the periodic XX ring `Σ σxσx + σyσy` from its
/// Jordan–Wigner fermions: `ε_k = 4 cos k`, periodic momenta for an odd
/// particle number and antiperiodic ones for an even number.
fn free_fermion_ring_energy(n: usize) -> f64 {
    (0..=n)
        .map(|particles| {
            let shift = if particles % 2 == 1 { 0.0 } else { 0.5 };
            let mut eps: Vec<f64> = (0..n).map(|m| 4.0 * (2.0 * PI * (m as f64 + shift) / n as f64).cos()).collect();
            eps.sort_by(f64::total_cmp);
            eps[..particles].iter().sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

fn projector(state: &StateVector) -> CMatrix {
    let v = nalgebra::DVector::from_column_slice(state.amplitudes());
    &v * v.adjoint()
}

#[test]
fn two_site_ring_counts_its_bond_twice() {
    let (energy, psi) = exact_ground_state(2, XxzCoupling::new(1.0)).unwrap();
    // 2(σ·σ) on the singlet: 2·(−3)
    assert!((energy + 6.0).abs() < 1e-12);
    let overlap: xxzbell_core::C64 =
        psi.amplitudes().iter().zip(bell_singlet().amplitudes()).map(|(a, b)| a.conj() * b).sum();
    assert!((overlap.norm() - 1.0).abs() < 1e-12);
    // dense 4×4 check of the doubled bond
    let h = xxzbell_core::itebd::two_site_hamiltonian(XxzCoupling::new(1.0)) * c(2.0, 0.0);
    assert!((hermitian_eig(&h).unwrap().values[0] - energy).abs() < 1e-12);
}

#[test]
fn xx_rings_match_free_fermions() {
    for n in [4, 6, 8, 10] {
        let (energy, psi) = exact_ground_state(n, XxzCoupling::new(0.0)).unwrap();
        let expected = free_fermion_ring_energy(n);
        assert!((energy - expected).abs() < 1e-9, "N={n}: {energy} vs {expected}");
        assert!((ring_energy(&psi, XxzCoupling::new(0.0)) - energy).abs() < 1e-9);
    }
    assert!((free_fermion_ring_energy(4) + 4.0 * 2f64.sqrt()).abs() < 1e-12);
    // the per-site energy approaches −4/π
    let (e16, _) = exact_ground_state(16, XxzCoupling::new(0.0)).unwrap();
    assert!((e16 - free_fermion_ring_energy(16)).abs() < 1e-8);
    assert!((e16 / 16.0 + 4.0 / PI).abs() < 1e-2);
}

#[test]
fn gapped_rings_approach_the_infinite_chain() {
    // finite rings sit below the infinite-chain energy and approach it
    // monotonically; see the ledger for why 2e-3 at N=12 is unattainable
    let coupling = XxzCoupling::new(2.0);
    let (_, report) = ground_state(coupling, 16, &EvolutionSchedule::default(), 1).unwrap();
    let itebd = report.final_energy_per_site;
    let gaps: Vec<f64> =
        [12, 14, 16].iter().map(|&n| (exact_ground_state(n, coupling).unwrap().0 / n as f64 - itebd).abs()).collect();
    assert!(gaps[0] < 2e-2);
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2]);
    assert!((extrapolated_energy_per_site(coupling).unwrap() - itebd).abs() < 5e-3);
    // variational ordering with the finite-size allowance
    let e16 = exact_ground_state(16, coupling).unwrap().0 / 16.0;
    assert!(itebd >= e16 - 5e-3);
}

#[test]
fn ghz_fixtures_and_partial_traces() {
    let g2 = ghz_state(2);
    let h = FRAC_1_SQRT_2;
    let amps: Vec<f64> = g2.amplitudes().iter().map(|a| a.re).collect();
    assert_eq!(amps, vec![h, 0.0, 0.0, h]);
    assert!((ghz_state(7).norm() - 1.0).abs() < 1e-12);
    let rho = rdm_from_statevector(&ghz_state(3), 0, 2).unwrap();
    let mut expected = CMatrix::zeros(4, 4);
    expected[(0, 0)] = c(0.5, 0.0);
    expected[(3, 3)] = c(0.5, 0.0);
    assert!(max_abs_diff(rho.matrix(), &expected) < 1e-12);
    let tail = rdm_from_statevector(&ghz_state(3), 1, 2).unwrap();
    assert!(max_abs_diff(tail.matrix(), &expected) < 1e-12);
    let singlet = bell_singlet();
    assert!((singlet.amplitudes()[1].re - h).abs() < 1e-15 && (singlet.amplitudes()[2].re + h).abs() < 1e-15);
}

#[test]
fn product_states_have_pure_marginals() {
    let spins = [Spin::Up, Spin::Down, Spin::Down, Spin::Up, Spin::Down];
    let psi = product_state(&spins);
    for first in 0..5 {
        for n in 1..=(5 - first) {
            let rho = rdm_from_statevector(&psi, first, n).unwrap();
            let sub = product_state(&spins[first..first + n]);
            assert!(max_abs_diff(rho.matrix(), &projector(&sub)) < 1e-12);
        }
    }
}

#[test]
fn ring_ground_states_are_translation_invariant() {
    for delta in [0.5, 1.0] {
        let (_, psi) = exact_ground_state(12, XxzCoupling::new(delta)).unwrap();
        for n in [2, 3, 4] {
            let first = rdm_from_statevector(&psi, 0, n).unwrap();
            for start in 1..=(12 - n) {
                let other = rdm_from_statevector(&psi, start, n).unwrap();
                assert!(max_abs_diff(first.matrix(), other.matrix()) < 1e-10, "Δ={delta} n={n} start={start}");
            }
        }
    }
}

#[test]
fn gapless_itebd_rdms_agree_with_the_ring() {
    for delta in [0.0, 0.5, 1.0] {
        let coupling = XxzCoupling::new(delta);
        let (state, _) = ground_state(coupling, 16, &EvolutionSchedule::default(), 1).unwrap();
        let (_, psi) = exact_ground_state(16, coupling).unwrap();
        for n in [2, 3, 4] {
            let ed = rdm_from_statevector(&psi, (16 - n) / 2, n).unwrap();
            let mps = averaged_reduced_density_matrix(&state, n).unwrap();
            let distance = trace_distance(ed.matrix(), mps.matrix()).unwrap();
            assert!(distance <= 2e-2, "Δ={delta} n={n}: {distance}");
        }
    }
}

#[test]
fn resource_and_range_errors() {
    assert!(matches!(
        exact_ground_state(MAX_ED_SITES + 1, XxzCoupling::new(1.0)),
        Err(OracleError::ResourceLimit { .. })
    ));
    let frame = MeasurementFrame::random(5, &mut ChaCha8Rng::seed_from_u64(1));
    assert!(matches!(mk_bruteforce(&frame), Err(OracleError::ResourceLimit { .. })));
    assert!(matches!(rdm_from_statevector(&ghz_state(3), 2, 2), Err(OracleError::IndexOutOfRange { .. })));
    assert!(StateVector::new(2, vec![c(1.0, 0.0); 4]).is_err());
    assert!(StateVector::new(2, vec![c(1.0, 0.0); 3]).is_err());
}

#[test]
fn optimized_ghz_reaches_two() {
    let rho = rdm_from_statevector(&ghz_state(3), 0, 3).unwrap();
    let r = optimize(Objective::Mermin, BellInput::Rdm(&rho), PlaneConstraint::Full, 32, 11).unwrap();
    assert!((r.value - 2.0).abs() < 1e-6);
    // the optimum lies in the xy plane, where the classic GHZ frame sits
    let xy = optimize(Objective::Mermin, BellInput::Rdm(&rho), PlaneConstraint::Xy, 32, 11).unwrap();
    assert!((xy.value - 2.0).abs() < 1e-6);
}

#[test]
fn bruteforce_small_cases() {
    let a = UnitVector3::normalized(0.2, -0.7, 0.4).unwrap();
    let ap = UnitVector3::normalized(-0.3, 0.1, 0.9).unwrap();
    let one = MeasurementFrame::new(vec![a], vec![ap]).unwrap();
    assert!(max_abs_diff(&mk_bruteforce(&one).unwrap(), &direction_operator(&a)) < 1e-15);

    let b = UnitVector3::normalized(0.5, 0.5, -0.1).unwrap();
    let bp = UnitVector3::normalized(-0.6, 0.2, 0.3).unwrap();
    let two = MeasurementFrame::new(vec![a, b], vec![ap, bp]).unwrap();
    let sigma = |v: &UnitVector3| direction_operator(v);
    let expected =
        (kron(&sigma(&a), &(sigma(&b) + sigma(&bp))) + kron(&sigma(&ap), &(sigma(&b) - sigma(&bp)))) * c(0.5, 0.0);
    let brute = mk_bruteforce(&two).unwrap();
    assert!(max_abs_diff(&brute, &expected) < 1e-14);
    assert!(max_abs_diff(&brute, mk_operators(&two).m()) < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bruteforce_equals_recursion(n in 1usize..=4, seed in any::<u64>()) {
        let frame = MeasurementFrame::random(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let deviation = max_abs_diff(&mk_bruteforce(&frame).unwrap(), mk_operators(&frame).m());
        prop_assert!(deviation <= 1e-12);
    }
}
