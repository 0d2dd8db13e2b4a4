//! Fixtures shared by the benchmarks.

use xxzbell_core::itebd::{ground_state, EvolutionSchedule, XxzCoupling};
use xxzbell_core::mps::{averaged_reduced_density_matrix, MpsState};
use xxzbell_core::CorrelationTensor;

/// A ground state at bond dimension `d`, evolved with a short schedule: close
/// enough to converged for representative tensor shapes and spectra.
pub fn fixture_state(delta: f64, d: usize) -> MpsState {
    let schedule = EvolutionSchedule::with_limits(&[0.1, 0.01], 300, 1e-8).expect("valid schedule");
    ground_state(XxzCoupling::new(delta), d, &schedule, 0).expect("fixture ground state").0
}

/// Correlation tensor of the `n`-site block of [`fixture_state`].
pub fn fixture_tensor(delta: f64, n: usize) -> CorrelationTensor {
    let rho = averaged_reduced_density_matrix(&fixture_state(delta, 16), n).expect("fixture density matrix");
    CorrelationTensor::from_rdm(&rho).expect("fixture correlations")
}
