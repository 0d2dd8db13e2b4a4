//! Multi-start maximization of Bell values over measurement frames.
//!
//! Every restart draws random angles, runs a Nelder–Mead simplex search on
//! the negated objective and then polishes the result by exact
//! block-coordinate ascent: the Bell value is linear in each pair
//! `(a_k, a'_k)`, so the optimal pair given all other vectors is the
//! normalized projection of its gradient onto the allowed plane. Restarts
//! that still creep after the polish get a few Newton steps in angle space.
//! Objective evaluations go through [`CorrelationTensor`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bell::{ContractionScratch, CorrelationTensor, MeasurementFrame, Objective};
use crate::error::BellError;
use crate::linalg::{Axis, UnitVector3};
use crate::mps::{reduced_density_matrix, MpsState, ReducedDensityMatrix};

/// Values closer than this count as tied.
pub const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneConstraint {
    Full,
    Xy,
    Xz,
}

impl PlaneConstraint {
    pub fn as_str(self) -> &'static str {
        match self {
            PlaneConstraint::Full => "full",
            PlaneConstraint::Xy => "xy",
            PlaneConstraint::Xz => "xz",
        }
    }

    /// Pauli axes a frame vector may have components along.
    pub fn axes(self) -> &'static [Axis] {
        match self {
            PlaneConstraint::Full => &[Axis::X, Axis::Y, Axis::Z],
            PlaneConstraint::Xy => &[Axis::X, Axis::Y],
            PlaneConstraint::Xz => &[Axis::X, Axis::Z],
        }
    }

    /// Angle parameters per frame vector.
    pub fn params_per_vector(self) -> usize {
        match self {
            PlaneConstraint::Full => 2,
            _ => 1,
        }
    }

    fn vector(self, p: &[f64]) -> [f64; 3] {
        match self {
            PlaneConstraint::Full => {
                let (st, ct) = p[0].sin_cos();
                let (sp, cp) = p[1].sin_cos();
                [st * cp, st * sp, ct]
            }
            PlaneConstraint::Xy => {
                let (s, c) = p[0].sin_cos();
                [c, s, 0.0]
            }
            PlaneConstraint::Xz => {
                let (s, c) = p[0].sin_cos();
                [s, 0.0, c]
            }
        }
    }

    fn params_of(self, v: [f64; 3], out: &mut [f64]) {
        match self {
            PlaneConstraint::Full => {
                out[0] = v[2].clamp(-1.0, 1.0).acos();
                out[1] = v[1].atan2(v[0]);
            }
            PlaneConstraint::Xy => out[0] = v[1].atan2(v[0]),
            PlaneConstraint::Xz => out[0] = v[0].atan2(v[2]),
        }
    }

    fn random_params(self, rng: &mut impl Rng, out: &mut [f64]) {
        match self {
            PlaneConstraint::Full => {
                let z: f64 = rng.random_range(-1.0..=1.0);
                out[0] = z.acos();
                out[1] = rng.random_range(0.0..std::f64::consts::TAU);
            }
            _ => out[0] = rng.random_range(0.0..std::f64::consts::TAU),
        }
    }
}

impl fmt::Display for PlaneConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlaneConstraint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(PlaneConstraint::Full),
            "xy" => Ok(PlaneConstraint::Xy),
            "xz" => Ok(PlaneConstraint::Xz),
            other => Err(format!("unknown plane constraint '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub value: f64,
    pub frame: MeasurementFrame,
    pub objective: Objective,
    pub constraint: PlaneConstraint,
    pub restarts_used: usize,
    pub best_restart_index: usize,
    /// Restarts whose simplex contracted below the diameter tolerance or
    /// whose polish reached a stationary frame.
    pub converged_restarts: usize,
    /// At least one restart converged.
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    pub diameter_tol: f64,
    /// Edge length of the initial simplex, in radians.
    pub initial_step: f64,
    /// Maximal number of block-coordinate sweeps after the simplex search.
    pub polish_sweeps: usize,
    /// Newton iterations for restarts that neither the simplex nor the
    /// polish brought to a stationary frame.
    pub newton_iterations: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self { max_iterations: 5000, diameter_tol: 1e-8, initial_step: 0.5, polish_sweeps: 500, newton_iterations: 30 }
    }
}

/// Default restart count for `n`-site blocks.
pub fn default_restarts(n: usize) -> usize {
    if n <= 6 {
        64
    } else {
        128
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f` with the dimension-adaptive Nelder–Mead simplex method,
/// stopping once every vertex lies within `tol` (Euclidean) of the best one
/// or after `max_iter` iterations.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_iter: usize,
    tol: f64,
) -> NelderMeadOutcome {
    let d = x0.len();
    let df = d.max(1) as f64;
    let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / df, 0.75 - 0.5 / df, 1.0 - 1.0 / df);
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    simplex.push(x0.to_vec());
    for i in 0..d {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut order: Vec<usize> = (0..=d).collect();
    let mut iterations = 0;
    let point =
        |c: &[f64], w: &[f64], t: f64| -> Vec<f64> { c.iter().zip(w).map(|(ci, wi)| ci + t * (ci - wi)).collect() };
    loop {
        order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
        let best = order[0];
        let diameter = simplex
            .iter()
            .map(|v| v.iter().zip(&simplex[best]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if diameter <= tol || iterations >= max_iter {
            return NelderMeadOutcome {
                x: simplex[best].clone(),
                value: values[best],
                iterations,
                converged: diameter <= tol,
            };
        }
        iterations += 1;
        let worst = order[d];
        let second = order[d.saturating_sub(1)];
        let mut centroid = vec![0.0; d];
        for &i in &order[..d] {
            for (cc, x) in centroid.iter_mut().zip(&simplex[i]) {
                *cc += x / df;
            }
        }
        let xr = point(&centroid, &simplex[worst], alpha);
        let fr = f(&xr);
        if fr < values[best] {
            let xe = point(&centroid, &simplex[worst], alpha * beta);
            let fe = f(&xe);
            if fe < fr {
                simplex[worst] = xe;
                values[worst] = fe;
            } else {
                simplex[worst] = xr;
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second] {
            simplex[worst] = xr;
            values[worst] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[worst] {
            let xc = point(&centroid, &simplex[worst], alpha * gamma);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = point(&centroid, &simplex[worst], -gamma);
            let fc = f(&xc);
            (xc, fc)
        };
        if fc < values[worst].min(fr) {
            simplex[worst] = xc;
            values[worst] = fc;
            continue;
        }
        let anchor = simplex[best].clone();
        for &i in &order[1..] {
            for (x, a) in simplex[i].iter_mut().zip(&anchor) {
                *x = a + delta * (*x - a);
            }
            values[i] = f(&simplex[i]);
        }
    }
}

/// Density matrix or MPS from which the optimizer reads correlations.
#[derive(Debug, Clone, Copy)]
pub enum BellInput<'a> {
    Rdm(&'a ReducedDensityMatrix),
    Mps { state: &'a MpsState, n: usize },
}

impl BellInput<'_> {
    pub fn correlations(&self) -> Result<CorrelationTensor, BellError> {
        match self {
            BellInput::Rdm(rho) => CorrelationTensor::from_rdm(rho),
            BellInput::Mps { state, n } => CorrelationTensor::from_rdm(&reduced_density_matrix(state, *n)?),
        }
    }
}

struct Problem<'a> {
    tensor: &'a CorrelationTensor,
    objective: Objective,
    constraint: PlaneConstraint,
    n: usize,
    scratch: ContractionScratch,
    vectors: Vec<[f64; 3]>,
}

impl Problem<'_> {
    fn set_vectors(&mut self, params: &[f64]) {
        let k = self.constraint.params_per_vector();
        self.vectors.clear();
        for p in params.chunks(k) {
            self.vectors.push(self.constraint.vector(p));
        }
    }

    fn current_value(&mut self) -> f64 {
        let (m, mp) = self.tensor.mk_values_with(&self.vectors, &mut self.scratch);
        self.objective.combine(m, mp)
    }

    fn value(&mut self, params: &[f64]) -> f64 {
        self.set_vectors(params);
        self.current_value()
    }

    /// Replaces each `(a_k, a'_k)` by its best response until a full sweep
    /// moves no vector by more than [`POLISH_STEP_TOL`]. Returns whether
    /// that fixed point was reached.
    fn polish(&mut self, params: &mut [f64], max_sweeps: usize) -> bool {
        self.set_vectors(params);
        let axes = self.constraint.axes();
        let mut fixed_point = false;
        for _ in 0..max_sweeps {
            let mut largest_move = 0.0f64;
            for site in 0..self.n {
                let saved = [self.vectors[2 * site], self.vectors[2 * site + 1]];
                let mut grads = [[0.0f64; 3]; 2];
                for (slot, grad) in grads.iter_mut().enumerate() {
                    for axis in axes {
                        let mut e = [0.0; 3];
                        e[axis.index()] = 1.0;
                        self.vectors[2 * site + slot] = e;
                        self.vectors[2 * site + 1 - slot] = [0.0; 3];
                        grad[axis.index()] = self.current_value();
                    }
                }
                for (slot, grad) in grads.iter().enumerate() {
                    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                    let next = if norm > 0.0 { grad.map(|g| g / norm) } else { saved[slot] };
                    for (x, y) in next.iter().zip(&saved[slot]) {
                        largest_move = largest_move.max((x - y).abs());
                    }
                    self.vectors[2 * site + slot] = next;
                }
            }
            if largest_move <= POLISH_STEP_TOL {
                fixed_point = true;
                break;
            }
        }
        let k = self.constraint.params_per_vector();
        for (chunk, v) in params.chunks_mut(k).zip(&self.vectors) {
            self.constraint.params_of(*v, chunk);
        }
        fixed_point
    }

    /// Newton ascent in angle space with finite-difference derivatives,
    /// for optima where block-coordinate ascent only creeps along a weakly
    /// curved ridge. Negative-curvature directions are followed with the
    /// absolute curvature and every step is backtracked until the value does
    /// not decrease. Returns whether the gradient fell below
    /// [`NEWTON_GRADIENT_TOL`].
    fn newton_refine(&mut self, params: &mut [f64], max_iterations: usize) -> bool {
        let dim = params.len();
        let (hg, hh) = (1e-6, 1e-4);
        let mut x = params.to_vec();
        let mut fx = self.value(&x);
        for _ in 0..max_iterations {
            let mut grad = vec![0.0; dim];
            let mut hess = DMatrix::<f64>::zeros(dim, dim);
            let mut probe = x.clone();
            for i in 0..dim {
                probe[i] = x[i] + hg;
                let gp = self.value(&probe);
                probe[i] = x[i] - hg;
                let gm = self.value(&probe);
                grad[i] = (gp - gm) / (2.0 * hg);
                probe[i] = x[i] + hh;
                let fp = self.value(&probe);
                probe[i] = x[i] - hh;
                let fm = self.value(&probe);
                hess[(i, i)] = (fp - 2.0 * fx + fm) / (hh * hh);
                probe[i] = x[i];
            }
            if grad.iter().all(|g| g.abs() <= NEWTON_GRADIENT_TOL) {
                params.copy_from_slice(&x);
                return true;
            }
            for i in 0..dim {
                for j in 0..i {
                    let mut corner = |si: f64, sj: f64| {
                        probe[i] = x[i] + si * hh;
                        probe[j] = x[j] + sj * hh;
                        let v = self.value(&probe);
                        probe[i] = x[i];
                        probe[j] = x[j];
                        v
                    };
                    let h = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                        / (4.0 * hh * hh);
                    hess[(i, j)] = h;
                    hess[(j, i)] = h;
                }
            }
            // ascent step p = Σ_k u_k (u_k·g) / |λ_k|, flat directions damped
            let eig = SymmetricEigen::new(hess);
            let scale = eig.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs())).max(1e-300);
            let mut step = vec![0.0; dim];
            for (k, lambda) in eig.eigenvalues.iter().enumerate() {
                let u = eig.eigenvectors.column(k);
                let along: f64 = u.iter().zip(&grad).map(|(a, b)| a * b).sum();
                let curvature = lambda.abs().max(1e-8 * scale);
                for (s, ui) in step.iter_mut().zip(u.iter()) {
                    *s += ui * along / curvature;
                }
            }
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-10 {
                let trial: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + t * b).collect();
                let ft = self.value(&trial);
                if ft >= fx {
                    moved = ft > fx || trial != x;
                    x = trial;
                    fx = ft;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        params.copy_from_slice(&x);
        false
    }

    fn frame(&self, params: &[f64]) -> Result<MeasurementFrame, BellError> {
        let k = self.constraint.params_per_vector();
        let vecs = params
            .chunks(k)
            .map(|p| {
                let [x, y, z] = self.constraint.vector(p);
                UnitVector3::normalized(x, y, z)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let a = vecs.iter().step_by(2).copied().collect();
        let a_prime = vecs.iter().skip(1).step_by(2).copied().collect();
        MeasurementFrame::new(a, a_prime)
    }
}

/// A best-response sweep that moves no vector component by more than this
/// has reached a stationary frame.
pub const POLISH_STEP_TOL: f64 = 1e-10;
/// Newton refinement stops once every angle derivative is below this.
pub const NEWTON_GRADIENT_TOL: f64 = 1e-8;

/// Stream-separated generator for restart `index`, so that runs sharing a
/// seed share their leading restarts.
pub fn restart_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Maximizes the objective over frames using a correlation tensor that holds
/// at least the constraint's axes.
pub fn optimize_tensor(
    objective: Objective,
    tensor: &CorrelationTensor,
    constraint: PlaneConstraint,
    restarts: usize,
    seed: u64,
    settings: &OptimizerSettings,
) -> Result<OptimizationResult, BellError> {
    optimize_tensor_from(objective, tensor, constraint, restarts, seed, settings, &[])
}

/// Like [`optimize_tensor`], with additional restarts started from the given
/// frames (projected onto the constraint). They are indexed after the random
/// restarts.
pub fn optimize_tensor_from(
    objective: Objective,
    tensor: &CorrelationTensor,
    constraint: PlaneConstraint,
    restarts: usize,
    seed: u64,
    settings: &OptimizerSettings,
    starts: &[MeasurementFrame],
) -> Result<OptimizationResult, BellError> {
    let restricted;
    let tensor = if tensor.axes() == constraint.axes() {
        tensor
    } else {
        restricted = tensor.restrict(constraint.axes());
        &restricted
    };
    let n = tensor.n();
    let mut problem = Problem {
        tensor,
        objective,
        constraint,
        n,
        scratch: ContractionScratch::default(),
        vectors: Vec::with_capacity(2 * n),
    };
    let dim = 2 * n * constraint.params_per_vector();
    let restarts = restarts.max(1);
    // (value, restart index, params, converged)
    let mut best_conv: Option<(f64, usize, Vec<f64>)> = None;
    let mut best_any: Option<(f64, usize, Vec<f64>)> = None;
    let mut converged_restarts = 0;
    for r in 0..restarts + starts.len() {
        let mut x0 = vec![0.0; dim];
        let k = constraint.params_per_vector();
        if r < restarts {
            let mut rng = restart_rng(seed, r);
            for chunk in x0.chunks_mut(k) {
                constraint.random_params(&mut rng, chunk);
            }
        } else {
            let frame = &starts[r - restarts];
            if frame.n() != n {
                return Err(BellError::DimensionMismatch { expected: n, got: frame.n() });
            }
            for (chunk, v) in x0.chunks_mut(k).zip(frame.interleaved()) {
                constraint.params_of(v, chunk);
            }
        }
        let nm = nelder_mead(
            |x| -problem.value(x),
            &x0,
            settings.initial_step,
            settings.max_iterations,
            settings.diameter_tol,
        );
        let mut x = nm.x;
        let mut stationary = problem.polish(&mut x, settings.polish_sweeps);
        if !(nm.converged || stationary) {
            stationary = problem.newton_refine(&mut x, settings.newton_iterations);
        }
        let value = problem.value(&x);
        let better = |slot: &Option<(f64, usize, Vec<f64>)>| slot.as_ref().is_none_or(|(v, _, _)| value > *v);
        if nm.converged || stationary {
            converged_restarts += 1;
            if better(&best_conv) {
                best_conv = Some((value, r, x.clone()));
            }
        }
        if better(&best_any) {
            best_any = Some((value, r, x));
        }
    }
    let converged = best_conv.is_some();
    let (_, index, params) = best_conv.or(best_any).expect("at least one restart");
    let frame = problem.frame(&params)?;
    let value = tensor.objective_value(objective, &frame);
    Ok(OptimizationResult {
        value,
        frame,
        objective,
        constraint,
        restarts_used: restarts + starts.len(),
        best_restart_index: index,
        converged_restarts,
        converged,
    })
}

/// Maximizes `Tr(ρ M_n)` or `Tr(ρ M_{n+})` over frames obeying `constraint`.
pub fn optimize(
    objective: Objective,
    input: BellInput<'_>,
    constraint: PlaneConstraint,
    restarts: usize,
    seed: u64,
) -> Result<OptimizationResult, BellError> {
    let tensor = input.correlations()?;
    optimize_tensor(objective, &tensor, constraint, restarts, seed, &OptimizerSettings::default())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneResults {
    pub xy: OptimizationResult,
    pub xz: OptimizationResult,
    /// Present for `n ≤ 4`.
    pub full: Option<OptimizationResult>,
}

impl PlaneResults {
    /// The better plane; ties within [`TIE_TOL`] go to `xy`.
    pub fn best(&self) -> &OptimizationResult {
        if self.xz.value > self.xy.value + TIE_TOL {
            &self.xz
        } else {
            &self.xy
        }
    }

    /// Largest value over all constraints that were run.
    pub fn best_value(&self) -> f64 {
        let planes = self.xy.value.max(self.xz.value);
        self.full.as_ref().map_or(planes, |f| planes.max(f.value))
    }

    pub fn converged(&self) -> bool {
        self.xy.converged && self.xz.converged && self.full.as_ref().is_none_or(|f| f.converged)
    }
}

/// Largest block size at which the full-sphere search also runs.
pub const FULL_CONSTRAINT_MAX_N: usize = 4;

pub fn optimize_both_planes_tensor(
    objective: Objective,
    tensor: &CorrelationTensor,
    restarts: usize,
    seed: u64,
    settings: &OptimizerSettings,
) -> Result<PlaneResults, BellError> {
    let xy = optimize_tensor(objective, tensor, PlaneConstraint::Xy, restarts, seed, settings)?;
    let xz = optimize_tensor(objective, tensor, PlaneConstraint::Xz, restarts, seed, settings)?;
    let full = if tensor.n() <= FULL_CONSTRAINT_MAX_N {
        // the plane optima are admissible full-sphere frames, so starting
        // from them guarantees the full search never ends below the planes
        let starts = [xy.frame.clone(), xz.frame.clone()];
        Some(optimize_tensor_from(objective, tensor, PlaneConstraint::Full, restarts, seed, settings, &starts)?)
    } else {
        None
    };
    Ok(PlaneResults { xy, xz, full })
}

/// Optimizes in the x–y and x–z planes (and on the full sphere for `n ≤ 4`).
pub fn optimize_both_planes(
    objective: Objective,
    input: BellInput<'_>,
    restarts: usize,
    seed: u64,
) -> Result<PlaneResults, BellError> {
    let tensor = input.correlations()?;
    optimize_both_planes_tensor(objective, &tensor, restarts, seed, &OptimizerSettings::default())
}

/// Closed-form two-qubit optimum `√(u₁ + u₂)`, with `u₁ ≥ u₂` the largest
/// eigenvalues of `TᵀT` for the correlation matrix `T_ab = Tr(ρ σ_a ⊗ σ_b)`.
pub fn horodecki_m2(rho: &ReducedDensityMatrix) -> Result<f64, BellError> {
    if rho.n() != 2 {
        return Err(BellError::DimensionMismatch { expected: 2, got: rho.n() });
    }
    let t = CorrelationTensor::from_rdm(rho)?;
    let tm = DMatrix::from_fn(3, 3, |a, b| t.get(&[Axis::ALL[a], Axis::ALL[b]]).unwrap_or(0.0));
    let ttt = tm.transpose() * &tm;
    let mut u: Vec<f64> = SymmetricEigen::new(ttt).eigenvalues.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    Ok((u[0] + u[1]).max(0.0).sqrt())
}
