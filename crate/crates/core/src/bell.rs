//! Mermin–Klyshko and Mermin–Svetlichny Bell operators.
//!
//! `M_1 = a_1·σ`, `M'_1 = a'_1·σ` and
//!
//! ```text
//! M_k  = ½ M_{k-1} ⊗ (a_k + a'_k)·σ + ½ M'_{k-1} ⊗ (a_k − a'_k)·σ
//! M'_k = ½ M'_{k-1} ⊗ (a'_k + a_k)·σ + ½ M_{k-1} ⊗ (a'_k − a_k)·σ
//! ```
//!
//! with the Svetlichny combination `M_{n+} = (M_n + M'_n)/√2`. Three
//! evaluation paths exist: dense operators against a density matrix, a
//! contraction through the MPS transfer space, and a Pauli correlation
//! tensor that reduces an evaluation to a `2^n`-term dot product.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BellError, LinalgError};
use crate::linalg::{c, kron, trace_product, vector_operator, Axis, CMatrix, UnitVector3, C64};
use crate::mps::{block_environments, MpsState, Parity, ReducedDensityMatrix, MAX_RDM_SITES};

/// Frame vectors must be unit length to this precision.
pub const FRAME_NORM_TOL: f64 = 1e-12;
/// Largest tolerated imaginary part of an expectation value.
pub const IMAGINARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Mermin,
    Svetlichny,
}

impl Objective {
    pub const ALL: [Objective; 2] = [Objective::Mermin, Objective::Svetlichny];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Mermin => "mermin",
            Objective::Svetlichny => "svetlichny",
        }
    }

    /// Objective value from the pair `(⟨M⟩, ⟨M'⟩)`.
    pub fn combine(self, m: f64, m_prime: f64) -> f64 {
        match self {
            Objective::Mermin => m,
            Objective::Svetlichny => (m + m_prime) * std::f64::consts::FRAC_1_SQRT_2,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mermin" => Ok(Objective::Mermin),
            "svetlichny" => Ok(Objective::Svetlichny),
            other => Err(format!("unknown objective '{other}'")),
        }
    }
}

/// Measurement directions `{a_1, a'_1, …, a_n, a'_n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrame {
    a: Vec<UnitVector3>,
    a_prime: Vec<UnitVector3>,
}

impl MeasurementFrame {
    pub fn new(a: Vec<UnitVector3>, a_prime: Vec<UnitVector3>) -> Result<Self, BellError> {
        if a.len() != a_prime.len() || a.is_empty() {
            return Err(BellError::MalformedFrame { a: a.len(), a_prime: a_prime.len() });
        }
        for v in a.iter().chain(&a_prime) {
            let norm = v.to_array().iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > FRAME_NORM_TOL {
                return Err(LinalgError::NonUnitVector { norm }.into());
            }
        }
        Ok(Self { a, a_prime })
    }

    /// Frame from `(θ, φ)` pairs ordered `a_1, a'_1, a_2, a'_2, …`.
    pub fn from_angles(angles: &[(f64, f64)]) -> Result<Self, BellError> {
        if !angles.len().is_multiple_of(2) || angles.is_empty() {
            return Err(BellError::MalformedFrame { a: angles.len().div_ceil(2), a_prime: angles.len() / 2 });
        }
        let vecs: Vec<UnitVector3> = angles.iter().map(|&(t, p)| UnitVector3::from_angles(t, p)).collect();
        let a = vecs.iter().step_by(2).copied().collect();
        let a_prime = vecs.iter().skip(1).step_by(2).copied().collect();
        Self::new(a, a_prime)
    }

    /// Directions drawn uniformly from the sphere.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut draw = || {
            let z: f64 = rng.random_range(-1.0..=1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            UnitVector3::from_angles(z.clamp(-1.0, 1.0).acos(), phi)
        };
        let mut a = Vec::with_capacity(n);
        let mut a_prime = Vec::with_capacity(n);
        for _ in 0..n {
            a.push(draw());
            a_prime.push(draw());
        }
        Self { a, a_prime }
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &[UnitVector3] {
        &self.a
    }

    pub fn a_prime(&self) -> &[UnitVector3] {
        &self.a_prime
    }

    /// `(θ, φ)` per vector, ordered `a_1, a'_1, a_2, a'_2, …`.
    pub fn angles(&self) -> Vec<(f64, f64)> {
        self.a.iter().zip(&self.a_prime).flat_map(|(a, ap)| [a.angles(), ap.angles()]).collect()
    }

    /// Exchanges every `a_j` with `a'_j`, which exchanges `M` and `M'`.
    pub fn swapped(&self) -> Self {
        Self { a: self.a_prime.clone(), a_prime: self.a.clone() }
    }

    /// Vectors as arrays, ordered `a_1, a'_1, a_2, a'_2, …`.
    pub fn interleaved(&self) -> Vec<[f64; 3]> {
        self.a.iter().zip(&self.a_prime).flat_map(|(a, ap)| [a.to_array(), ap.to_array()]).collect()
    }
}

fn add3(u: [f64; 3], v: [f64; 3], sign: f64) -> [f64; 3] {
    [u[0] + sign * v[0], u[1] + sign * v[1], u[2] + sign * v[2]]
}

#[derive(Debug, Clone, PartialEq)]
pub struct BellOperatorPair {
    n: usize,
    m: CMatrix,
    m_prime: CMatrix,
}

impl BellOperatorPair {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> &CMatrix {
        &self.m
    }

    pub fn m_prime(&self) -> &CMatrix {
        &self.m_prime
    }

    pub fn svetlichny(&self) -> CMatrix {
        svetlichny_operator(self)
    }

    pub fn operator(&self, objective: Objective) -> CMatrix {
        match objective {
            Objective::Mermin => self.m.clone(),
            Objective::Svetlichny => self.svetlichny(),
        }
    }
}

/// Dense `2^n × 2^n` operator pair from the recursion.
pub fn mk_operators(frame: &MeasurementFrame) -> BellOperatorPair {
    let half = c(0.5, 0.0);
    let mut m = vector_operator(frame.a[0].to_array());
    let mut mp = vector_operator(frame.a_prime[0].to_array());
    for k in 1..frame.n() {
        let (a, ap) = (frame.a[k].to_array(), frame.a_prime[k].to_array());
        let plus = vector_operator(add3(a, ap, 1.0));
        let minus = vector_operator(add3(a, ap, -1.0));
        let next_m = (kron(&m, &plus) + kron(&mp, &minus)) * half;
        let next_mp = (kron(&mp, &plus) - kron(&m, &minus)) * half;
        m = next_m;
        mp = next_mp;
    }
    BellOperatorPair { n: frame.n(), m, m_prime: mp }
}

/// `(M + M')/√2`.
pub fn svetlichny_operator(pair: &BellOperatorPair) -> CMatrix {
    (&pair.m + &pair.m_prime) * c(std::f64::consts::FRAC_1_SQRT_2, 0.0)
}

fn real_expectation(rho: &ReducedDensityMatrix, op: &CMatrix) -> Result<f64, BellError> {
    let n_op = op.nrows().trailing_zeros() as usize;
    if n_op != rho.n() || op.nrows() != rho.matrix().nrows() {
        return Err(BellError::DimensionMismatch { expected: n_op, got: rho.n() });
    }
    checked_real(trace_product(rho.matrix(), op))
}

fn checked_real(z: C64) -> Result<f64, BellError> {
    if z.im.abs() > IMAGINARY_TOL * z.re.abs().max(1.0) {
        return Err(BellError::ImaginaryResidue { residue: z.im });
    }
    Ok(z.re)
}

fn check_sizes(rho: &ReducedDensityMatrix, frame: &MeasurementFrame) -> Result<(), BellError> {
    if rho.n() != frame.n() {
        return Err(BellError::DimensionMismatch { expected: frame.n(), got: rho.n() });
    }
    Ok(())
}

/// `Tr(ρ M_n)` through the dense operator.
pub fn mermin_value(rho: &ReducedDensityMatrix, frame: &MeasurementFrame) -> Result<f64, BellError> {
    check_sizes(rho, frame)?;
    real_expectation(rho, mk_operators(frame).m())
}

/// `Tr(ρ M_{n+})` through the dense operator.
pub fn svetlichny_value(rho: &ReducedDensityMatrix, frame: &MeasurementFrame) -> Result<f64, BellError> {
    check_sizes(rho, frame)?;
    real_expectation(rho, &svetlichny_operator(&mk_operators(frame)))
}

/// `(Tr(ρ M_n), Tr(ρ M'_n))` through the dense operators.
pub fn mk_pair_values(rho: &ReducedDensityMatrix, frame: &MeasurementFrame) -> Result<(f64, f64), BellError> {
    check_sizes(rho, frame)?;
    let pair = mk_operators(frame);
    Ok((real_expectation(rho, pair.m())?, real_expectation(rho, pair.m_prime())?))
}

pub fn objective_value(
    objective: Objective,
    rho: &ReducedDensityMatrix,
    frame: &MeasurementFrame,
) -> Result<f64, BellError> {
    match objective {
        Objective::Mermin => mermin_value(rho, frame),
        Objective::Svetlichny => svetlichny_value(rho, frame),
    }
}

/// `Σ_{s,t} O_{st} B_s† E B_t` for the single-site operator `O = v·σ`.
fn push_operator(env: &CMatrix, b: [&CMatrix; 2], v: [f64; 3]) -> CMatrix {
    let o = vector_operator(v);
    let mut out = CMatrix::zeros(b[0].ncols(), b[0].ncols());
    for s in 0..2 {
        let bra = b[s].adjoint() * env;
        for t in 0..2 {
            if o[(s, t)] != c(0.0, 0.0) {
                out += (&bra * b[t]) * o[(s, t)];
            }
        }
    }
    out
}

/// `(⟨M_n⟩, ⟨M'_n⟩)` for the block starting at the even site, contracted
/// through the transfer space without forming a `2^n` operator.
pub fn mk_expectation_mps(state: &MpsState, frame: &MeasurementFrame) -> Result<(f64, f64), BellError> {
    mk_expectation_mps_at(state, frame, Parity::Even)
}

pub fn mk_expectation_mps_at(
    state: &MpsState,
    frame: &MeasurementFrame,
    offset: Parity,
) -> Result<(f64, f64), BellError> {
    let n = frame.n();
    if n > MAX_RDM_SITES {
        return Err(BellError::DimensionMismatch { expected: MAX_RDM_SITES, got: n });
    }
    let (left, right) = block_environments(state, n, offset)?;
    let site = |k: usize| {
        let s = state.site(Parity::from_index(offset.index() + k));
        [s.mat(0), s.mat(1)]
    };
    let mut em = push_operator(&left, site(0), frame.a[0].to_array());
    let mut emp = push_operator(&left, site(0), frame.a_prime[0].to_array());
    for k in 1..n {
        let (a, ap) = (frame.a[k].to_array(), frame.a_prime[k].to_array());
        let (plus, minus) = (add3(a, ap, 1.0), add3(a, ap, -1.0));
        let b = site(k);
        let m_plus = push_operator(&em, b, plus);
        let m_minus = push_operator(&em, b, minus);
        let mp_plus = push_operator(&emp, b, plus);
        let mp_minus = push_operator(&emp, b, minus);
        em = (m_plus + mp_minus) * c(0.5, 0.0);
        emp = (mp_plus - m_minus) * c(0.5, 0.0);
    }
    let norm = trace_product(&left, &right);
    let m = checked_real(trace_product(&em, &right) / norm)?;
    let mp = checked_real(trace_product(&emp, &right) / norm)?;
    Ok((m, mp))
}

/// Reusable buffers for [`CorrelationTensor::mk_values_with`].
#[derive(Debug, Clone, Default)]
pub struct ContractionScratch {
    m: Vec<f64>,
    mp: Vec<f64>,
    next_m: Vec<f64>,
    next_mp: Vec<f64>,
}

/// Pauli correlations `T_{i_1…i_n} = Tr(ρ σ_{i_1} ⊗ … ⊗ σ_{i_n})` with each
/// index running over `axes` (site 1 is the most significant index).
///
/// Bell operators are sums of Pauli strings with coefficients that are
/// products of frame components, so `Tr(ρ M_n)` is a contraction of this
/// tensor with coefficient tensors built by the same recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTensor {
    n: usize,
    axes: Vec<Axis>,
    data: Vec<f64>,
}

impl CorrelationTensor {
    /// All `3^n` correlations of `rho`.
    pub fn from_rdm(rho: &ReducedDensityMatrix) -> Result<Self, BellError> {
        let n = rho.n();
        let dim = 1usize << n;
        let mat = rho.matrix();
        // interleave (row bit, column bit) per site into one base-4 digit
        let spread = |mut x: usize| {
            let mut out = 0usize;
            let mut shift = 0;
            while x > 0 {
                out |= (x & 1) << shift;
                x >>= 1;
                shift += 2;
            }
            out
        };
        let spreads: Vec<usize> = (0..dim).map(spread).collect();
        let mut w = vec![c(0.0, 0.0); dim * dim];
        for r in 0..dim {
            for col in 0..dim {
                w[(spreads[r] << 1) | spreads[col]] = mat[(r, col)];
            }
        }
        // (s,t) digit → Pauli digit: 0 = I, 1 = x, 2 = y, 3 = z
        let i = c(0.0, 1.0);
        for k in 0..n {
            let stride = 1usize << (2 * k);
            for base in 0..w.len() {
                if !(base / stride).is_multiple_of(4) {
                    continue;
                }
                let v = [w[base], w[base + stride], w[base + 2 * stride], w[base + 3 * stride]];
                w[base] = v[0] + v[3];
                w[base + stride] = v[1] + v[2];
                w[base + 2 * stride] = i * (v[1] - v[2]);
                w[base + 3 * stride] = v[0] - v[3];
            }
        }
        let axes = Axis::ALL.to_vec();
        let mut data = Vec::with_capacity(3usize.pow(n as u32));
        let mut max_im = 0.0f64;
        for idx in 0..3usize.pow(n as u32) {
            let mut rest = idx;
            let mut pos = 0usize;
            for k in 0..n {
                let digit = rest % 3 + 1;
                rest /= 3;
                pos |= digit << (2 * k);
            }
            let z = w[pos];
            max_im = max_im.max(z.im.abs());
            data.push(z.re);
        }
        if max_im > IMAGINARY_TOL {
            return Err(BellError::ImaginaryResidue { residue: max_im });
        }
        Ok(Self { n, axes, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Correlation for one Pauli string; `None` if an axis was dropped.
    pub fn get(&self, string: &[Axis]) -> Option<f64> {
        if string.len() != self.n {
            return None;
        }
        let k = self.axes.len();
        let mut idx = 0;
        for a in string {
            idx = idx * k + self.axes.iter().position(|b| b == a)?;
        }
        Some(self.data[idx])
    }

    /// Keeps only the strings built from `axes`.
    pub fn restrict(&self, axes: &[Axis]) -> Self {
        let k = axes.len();
        let total = k.pow(self.n as u32);
        let mut data = Vec::with_capacity(total);
        let mut digits = vec![0usize; self.n];
        for idx in 0..total {
            let mut rest = idx;
            for d in digits.iter_mut().rev() {
                *d = rest % k;
                rest /= k;
            }
            let string: Vec<Axis> = digits.iter().map(|&d| axes[d]).collect();
            data.push(self.get(&string).expect("restricted axes must be a subset"));
        }
        Self { n: self.n, axes: axes.to_vec(), data }
    }

    /// `(⟨M_n⟩, ⟨M'_n⟩)` from raw (not necessarily unit) vectors ordered
    /// `a_1, a'_1, a_2, a'_2, …`. Components along axes absent from the
    /// tensor are ignored.
    pub fn mk_values_raw(&self, vectors: &[[f64; 3]]) -> (f64, f64) {
        self.mk_values_with(vectors, &mut ContractionScratch::default())
    }

    /// As [`Self::mk_values_raw`], reusing buffers across calls.
    pub fn mk_values_with(&self, vectors: &[[f64; 3]], scratch: &mut ContractionScratch) -> (f64, f64) {
        assert_eq!(vectors.len(), 2 * self.n, "need two vectors per site");
        let k = self.axes.len();
        let mut idx = [0usize; 3];
        for (slot, a) in idx.iter_mut().zip(&self.axes) {
            *slot = a.index();
        }
        let ContractionScratch { m, mp, next_m, next_mp } = scratch;
        m.clear();
        mp.clear();
        m.extend(idx[..k].iter().map(|&i| vectors[0][i]));
        mp.extend(idx[..k].iter().map(|&i| vectors[1][i]));
        for site in 1..self.n {
            let (a, ap) = (vectors[2 * site], vectors[2 * site + 1]);
            let mut plus = [0.0; 3];
            let mut minus = [0.0; 3];
            for j in 0..k {
                plus[j] = 0.5 * (a[idx[j]] + ap[idx[j]]);
                minus[j] = 0.5 * (a[idx[j]] - ap[idx[j]]);
            }
            next_m.clear();
            next_mp.clear();
            for (&x, &xp) in m.iter().zip(mp.iter()) {
                for j in 0..k {
                    next_m.push(x * plus[j] + xp * minus[j]);
                    next_mp.push(xp * plus[j] - x * minus[j]);
                }
            }
            std::mem::swap(m, next_m);
            std::mem::swap(mp, next_mp);
        }
        let mut vm = 0.0;
        let mut vmp = 0.0;
        for ((x, xp), t) in m.iter().zip(mp.iter()).zip(&self.data) {
            vm += x * t;
            vmp += xp * t;
        }
        (vm, vmp)
    }

    pub fn mk_values(&self, frame: &MeasurementFrame) -> (f64, f64) {
        self.mk_values_raw(&frame.interleaved())
    }

    pub fn objective_value(&self, objective: Objective, frame: &MeasurementFrame) -> f64 {
        let (m, mp) = self.mk_values(frame);
        objective.combine(m, mp)
    }
}
