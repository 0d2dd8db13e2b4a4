//! Cross-validation suites against the exact oracle: operator algebra, the
//! contracted expectation path, reference states, density-matrix
//! consistency, and iTEBD energies / density matrices versus exact
//! diagonalization.

use std::collections::HashMap;
use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bell::{mk_operators, mk_pair_values, CorrelationTensor, MeasurementFrame, Objective};
use crate::error::OracleError;
use crate::itebd::{ground_state, EvolutionSchedule, Phase, XxzCoupling};
use crate::linalg::{c, max_abs_diff, trace_distance, CMatrix};
use crate::mps::{averaged_reduced_density_matrix, MpsState, ReducedDensityMatrix};
use crate::optimize::{optimize, BellInput, PlaneConstraint};
use crate::oracle::{
    exact_ground_state, extrapolated_energy_per_site, ghz_state, mk_bruteforce, rdm_from_statevector, MAX_ED_SITES,
};

pub const MK_BRUTEFORCE_TOL: f64 = 1e-12;
pub const CONTRACTION_TOL: f64 = 1e-9;
pub const GHZ_TOL: f64 = 1e-6;
pub const PARTIAL_TRACE_TOL: f64 = 1e-10;
/// Trace-distance bound between iTEBD and exact density matrices for Δ > 1.
pub const RDM_GAPPED_TOL: f64 = 5e-3;
/// Trace-distance bound for |Δ| ≤ 1, where a finite ring differs visibly
/// from the infinite chain.
pub const RDM_GAPLESS_TOL: f64 = 2e-2;
/// Relative energy error against the closed forms at Δ = 0 and Δ = 1.
pub const ENERGY_CLOSED_FORM_TOL: f64 = 1.6e-4;
/// Relative energy error against the exact-diagonalization reference.
pub const ENERGY_ED_TOL: f64 = 5e-3;
/// Bond dimension of the iTEBD states under test.
pub const CHECK_BOND_DIM: usize = 16;

pub const ENERGY_DELTAS: [f64; 7] = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0];
pub const RDM_DELTAS: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 3.0];
pub const RDM_SIZES: [usize; 3] = [2, 3, 4];

/// Exact thermodynamic-limit energy per site, where a closed form exists:
/// `−4/π` for the XX chain and `1 − 4 ln 2` at the isotropic point.
pub fn closed_form_energy(delta: f64) -> Option<f64> {
    if delta == 0.0 {
        Some(-4.0 / PI)
    } else if delta == 1.0 {
        Some(1.0 - 4.0 * LN_2)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    MkBruteforce,
    Contraction,
    Ghz,
    PartialTrace,
    Energy,
    ItebdRdm,
}

impl Suite {
    pub const ALL: [Suite; 6] =
        [Suite::MkBruteforce, Suite::Contraction, Suite::Ghz, Suite::PartialTrace, Suite::Energy, Suite::ItebdRdm];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::MkBruteforce => "mk-bruteforce",
            Suite::Contraction => "contraction",
            Suite::Ghz => "ghz",
            Suite::PartialTrace => "partial-trace",
            Suite::Energy => "energy",
            Suite::ItebdRdm => "itebd-rdm",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL.into_iter().find(|suite| suite.as_str() == s).ok_or_else(|| {
            let names: Vec<_> = Suite::ALL.iter().map(|s| s.as_str()).collect();
            format!("unknown suite '{s}' (expected one of {}, or all)", names.join(", "))
        })
    }
}

/// One comparison: `deviation` must not exceed `tolerance`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub suite: Suite,
    pub name: String,
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(suite: Suite, name: String, deviation: f64, tolerance: f64) -> Self {
        Self { suite, name, deviation, tolerance, passed: deviation <= tolerance }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: {:.3e} (tolerance {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.deviation,
            self.tolerance
        )
    }
}

/// Runs suites, sharing ground states between them.
#[derive(Default)]
pub struct CheckRunner {
    itebd: HashMap<u64, (MpsState, f64)>,
    ed: HashMap<(usize, u64), (f64, crate::oracle::StateVector)>,
}

impl CheckRunner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn run(&mut self, suite: Suite) -> Result<Vec<CheckOutcome>, OracleError> {
        match suite {
            Suite::MkBruteforce => mk_bruteforce_suite(),
            Suite::Contraction => contraction_suite(),
            Suite::Ghz => ghz_suite(),
            Suite::PartialTrace => self.partial_trace_suite(),
            Suite::Energy => self.energy_suite(),
            Suite::ItebdRdm => self.itebd_rdm_suite(),
        }
    }

    /// D = 16 ground state and its energy per site.
    pub fn itebd(&mut self, delta: f64) -> Result<&(MpsState, f64), OracleError> {
        if let std::collections::hash_map::Entry::Vacant(e) = self.itebd.entry(delta.to_bits()) {
            let (state, report) =
                ground_state(XxzCoupling::new(delta), CHECK_BOND_DIM, &EvolutionSchedule::default(), 0)?;
            e.insert((state, report.final_energy_per_site));
        }
        Ok(&self.itebd[&delta.to_bits()])
    }

    pub fn exact(&mut self, n: usize, delta: f64) -> Result<&(f64, crate::oracle::StateVector), OracleError> {
        let key = (n, delta.to_bits());
        if let std::collections::hash_map::Entry::Vacant(e) = self.ed.entry(key) {
            let result = exact_ground_state(n, XxzCoupling::new(delta))?;
            e.insert(result);
        }
        Ok(&self.ed[&key])
    }

    fn partial_trace_suite(&mut self) -> Result<Vec<CheckOutcome>, OracleError> {
        let suite = Suite::PartialTrace;
        let mut out = Vec::new();
        for delta in [0.5, 2.0] {
            let (state, _) = self.itebd(delta)?;
            let mut previous = averaged_reduced_density_matrix(state, 1)?;
            for n in 2..=6 {
                let rho = averaged_reduced_density_matrix(state, n)?;
                let dev = max_abs_diff(rho.partial_trace_last()?.matrix(), previous.matrix())
                    .max(max_abs_diff(rho.partial_trace_first()?.matrix(), previous.matrix()));
                out.push(CheckOutcome::new(
                    suite,
                    format!("itebd Δ={delta} ρ{n} → ρ{}", n - 1),
                    dev,
                    PARTIAL_TRACE_TOL,
                ));
                previous = rho;
            }
        }
        let ring = 12;
        let (_, psi) = self.exact(ring, 1.0)?;
        let psi = psi.clone();
        for n in 2..=5 {
            let rho = rdm_from_statevector(&psi, 0, n)?;
            let left = rdm_from_statevector(&psi, 0, n - 1)?;
            let right = rdm_from_statevector(&psi, 1, n - 1)?;
            let dev = max_abs_diff(rho.partial_trace_last()?.matrix(), left.matrix())
                .max(max_abs_diff(rho.partial_trace_first()?.matrix(), right.matrix()));
            out.push(CheckOutcome::new(suite, format!("ring N={ring} ρ{n} → ρ{}", n - 1), dev, PARTIAL_TRACE_TOL));
        }
        let reference = rdm_from_statevector(&psi, 0, 3)?;
        let dev = (1..=ring - 3)
            .map(|first| Ok(max_abs_diff(rdm_from_statevector(&psi, first, 3)?.matrix(), reference.matrix())))
            .collect::<Result<Vec<f64>, OracleError>>()?
            .into_iter()
            .fold(0.0, f64::max);
        out.push(CheckOutcome::new(suite, format!("ring N={ring} ρ3 translation invariance"), dev, PARTIAL_TRACE_TOL));
        Ok(out)
    }

    fn energy_suite(&mut self) -> Result<Vec<CheckOutcome>, OracleError> {
        let mut out = Vec::new();
        for delta in ENERGY_DELTAS {
            let energy = self.itebd(delta)?.1;
            let (reference, label, tolerance) = match closed_form_energy(delta) {
                Some(e) => (e, "closed form", ENERGY_CLOSED_FORM_TOL),
                None => (extrapolated_energy_per_site(XxzCoupling::new(delta))?, "extrapolated ED", ENERGY_ED_TOL),
            };
            let rel = ((energy - reference) / reference).abs();
            out.push(CheckOutcome::new(
                Suite::Energy,
                format!("Δ={delta} e={energy:.8} vs {label} {reference:.8}"),
                rel,
                tolerance,
            ));
            if XxzCoupling::new(delta).phase() == Phase::Antiferromagnetic {
                let ed = self.exact(MAX_ED_SITES, delta)?.0 / MAX_ED_SITES as f64;
                out.push(CheckOutcome::new(
                    Suite::Energy,
                    format!("Δ={delta} variational ordering against N={MAX_ED_SITES}"),
                    (ed - energy).max(0.0),
                    ENERGY_ED_TOL,
                ));
            }
        }
        Ok(out)
    }

    fn itebd_rdm_suite(&mut self) -> Result<Vec<CheckOutcome>, OracleError> {
        let mut out = Vec::new();
        for delta in RDM_DELTAS {
            let tolerance = match XxzCoupling::new(delta).phase() {
                Phase::Antiferromagnetic => RDM_GAPPED_TOL,
                _ => RDM_GAPLESS_TOL,
            };
            for n in RDM_SIZES {
                let rho = averaged_reduced_density_matrix(&self.itebd(delta)?.0, n)?;
                let (_, psi) = self.exact(MAX_ED_SITES, delta)?;
                let exact = rdm_from_statevector(psi, (MAX_ED_SITES - n) / 2, n)?;
                let dist = trace_distance(rho.matrix(), exact.matrix())?;
                out.push(CheckOutcome::new(
                    Suite::ItebdRdm,
                    format!("Δ={delta} n={n} trace distance to N={MAX_ED_SITES}"),
                    dist,
                    tolerance,
                ));
            }
        }
        Ok(out)
    }
}

/// Runs one suite with a fresh [`CheckRunner`].
pub fn run_suite(suite: Suite) -> Result<Vec<CheckOutcome>, OracleError> {
    CheckRunner::new().run(suite)
}

fn mk_bruteforce_suite() -> Result<Vec<CheckOutcome>, OracleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut out = Vec::new();
    for n in 1..=4 {
        let mut dev = 0.0f64;
        for _ in 0..5 {
            let frame = MeasurementFrame::random(n, &mut rng);
            dev = dev.max(max_abs_diff(&mk_bruteforce(&frame)?, mk_operators(&frame).m()));
        }
        out.push(CheckOutcome::new(
            Suite::MkBruteforce,
            format!("n={n} recursion vs expansion"),
            dev,
            MK_BRUTEFORCE_TOL,
        ));
    }
    Ok(out)
}

/// Random full-rank density matrix on `n` qubits.
pub fn random_density_matrix(n: usize, rng: &mut impl Rng) -> Result<ReducedDensityMatrix, OracleError> {
    let d = 1usize << n;
    let g = CMatrix::from_fn(d, d, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let rho = &g * g.adjoint();
    let tr = rho.trace();
    Ok(ReducedDensityMatrix::from_matrix(rho / tr)?)
}

fn contraction_suite() -> Result<Vec<CheckOutcome>, OracleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut out = Vec::new();
    for n in 2..=8 {
        let rho = random_density_matrix(n, &mut rng)?;
        let tensor = CorrelationTensor::from_rdm(&rho)?;
        let mut dev = 0.0f64;
        for _ in 0..3 {
            let frame = MeasurementFrame::random(n, &mut rng);
            let (m, mp) = mk_pair_values(&rho, &frame)?;
            let (tm, tmp) = tensor.mk_values(&frame);
            dev = dev.max((m - tm).abs()).max((mp - tmp).abs());
        }
        out.push(CheckOutcome::new(Suite::Contraction, format!("n={n} dense vs contracted"), dev, CONTRACTION_TOL));
    }
    Ok(out)
}

fn ghz_suite() -> Result<Vec<CheckOutcome>, OracleError> {
    let mut out = Vec::new();
    for n in 2..=4 {
        let rho = rdm_from_statevector(&ghz_state(n), 0, n)?;
        let result = optimize(Objective::Mermin, BellInput::Rdm(&rho), PlaneConstraint::Full, 16, 0)?;
        let expected = 2f64.powf((n as f64 - 1.0) / 2.0);
        out.push(CheckOutcome::new(
            Suite::Ghz,
            format!("n={n} optimized Mermin value {:.9} vs {expected:.9}", result.value),
            (result.value - expected).abs(),
            GHZ_TOL,
        ));
    }
    Ok(out)
}
