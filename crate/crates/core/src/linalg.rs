//! Dense complex linear algebra for spin-1/2 systems.
//!
//! Everything in this crate lives in Hilbert spaces of at most a few thousand
//! dimensions, so matrices are stored densely as [`CMatrix`]. Decompositions
//! are delegated to `nalgebra`; this module adds the spin-specific pieces
//! (Pauli algebra, direction operators) and the Hermitian helpers used by the
//! imaginary-time evolution.

use nalgebra::linalg::{SymmetricEigen, SVD};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::LinalgError;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
type DVectorC = DVector<C64>;

/// Absolute element tolerance used when checking that an input is Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-9;

/// Tolerance on `| |a| - 1 |` accepted when constructing a [`UnitVector3`].
pub const UNIT_NORM_TOL: f64 = 1e-9;

const EIG_EPS: f64 = 1e-15;
const MAX_SWEEPS: usize = 10_000;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// The Pauli matrix along `axis`.
pub fn pauli(axis: Axis) -> CMatrix {
    let (z, o, i) = (c(0.0, 0.0), c(1.0, 0.0), c(0.0, 1.0));
    match axis {
        Axis::X => CMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        Axis::Y => CMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        Axis::Z => CMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
    }
}

/// A direction in R³, normalized to machine precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitVector3 {
    x: f64,
    y: f64,
    z: f64,
}

impl UnitVector3 {
    pub const X: UnitVector3 = UnitVector3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: UnitVector3 = UnitVector3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: UnitVector3 = UnitVector3 { x: 0.0, y: 0.0, z: 1.0 };

    /// Accepts `(x, y, z)` when its norm is within [`UNIT_NORM_TOL`] of one and
    /// rescales it onto the sphere.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, LinalgError> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(LinalgError::NonUnitVector { norm });
        }
        Ok(Self { x: x / norm, y: y / norm, z: z / norm })
    }

    /// Normalizes an arbitrary non-zero vector.
    pub fn normalized(x: f64, y: f64, z: f64) -> Result<Self, LinalgError> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(LinalgError::NonUnitVector { norm });
        }
        Ok(Self { x: x / norm, y: y / norm, z: z / norm })
    }

    /// `(sin θ cos φ, sin θ sin φ, cos θ)`.
    pub fn from_angles(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Self { x: st * cp, y: st * sp, z: ct }
    }

    /// Polar angle in `[0, π]` and azimuth in `[0, 2π)`.
    pub fn angles(&self) -> (f64, f64) {
        let theta = self.z.clamp(-1.0, 1.0).acos();
        let mut phi = self.y.atan2(self.x);
        if phi < 0.0 {
            phi += std::f64::consts::TAU;
        }
        if phi >= std::f64::consts::TAU {
            phi = 0.0;
        }
        (theta, phi)
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }
}

/// `v · σ` for an arbitrary real vector (not necessarily unit length).
pub fn vector_operator(v: [f64; 3]) -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(v[2], 0.0), c(v[0], -v[1]), c(v[0], v[1]), c(-v[2], 0.0)])
}

/// `a · σ`, Hermitian with spectrum `{-1, +1}`.
pub fn direction_operator(a: &UnitVector3) -> CMatrix {
    vector_operator(a.to_array())
}

/// Checked variant taking raw components.
pub fn direction_operator_from(v: [f64; 3]) -> Result<CMatrix, LinalgError> {
    let a = UnitVector3::new(v[0], v[1], v[2])?;
    Ok(direction_operator(&a))
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Largest element of `|A - A†|`.
pub fn hermitian_deviation(a: &CMatrix) -> f64 {
    if a.nrows() != a.ncols() {
        return f64::INFINITY;
    }
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn is_hermitian(a: &CMatrix, tol: f64) -> bool {
    hermitian_deviation(a) <= tol
}

fn require_hermitian(a: &CMatrix) -> Result<(), LinalgError> {
    let deviation = hermitian_deviation(a);
    if deviation > HERMITIAN_TOL {
        return Err(LinalgError::NotHermitian { deviation });
    }
    Ok(())
}

/// `(A + A†) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * c(0.5, 0.0)
}

#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: CMatrix,
}

impl HermitianEigen {
    /// `V f(w) V†`.
    pub fn map(&self, f: impl Fn(f64) -> C64) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &w) in self.values.iter().enumerate() {
            let fw = f(w);
            for i in 0..n {
                scaled[(i, j)] *= fw;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

pub fn hermitian_eig(a: &CMatrix) -> Result<HermitianEigen, LinalgError> {
    require_hermitian(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(HermitianEigen { values: vec![], vectors: CMatrix::zeros(0, 0) });
    }
    let sym = hermitian_part(a);
    let eig = SymmetricEigen::try_new(sym, EIG_EPS, MAX_SWEEPS)
        .ok_or(LinalgError::ConvergenceFailure("hermitian eigendecomposition"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    Ok(HermitianEigen { values, vectors })
}

/// `exp(s A)` for Hermitian `A`.
pub fn hermitian_exp(a: &CMatrix, s: f64) -> Result<CMatrix, LinalgError> {
    let eig = hermitian_eig(a)?;
    Ok(eig.map(|w| c((s * w).exp(), 0.0)))
}

#[derive(Debug, Clone)]
pub struct Svd {
    /// `m × k` with orthonormal columns.
    pub u: CMatrix,
    /// Non-negative, descending, length `k = min(m, n)`.
    pub singular_values: Vec<f64>,
    /// `k × n` with orthonormal rows.
    pub v_adjoint: CMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> CMatrix {
        let mut us = self.u.clone();
        for (j, &s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us * &self.v_adjoint
    }
}

pub fn svd(a: &CMatrix) -> Result<Svd, LinalgError> {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok(Svd { u: CMatrix::zeros(m, 0), singular_values: vec![], v_adjoint: CMatrix::zeros(0, n) });
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(LinalgError::ConvergenceFailure("svd of non-finite matrix"));
    }
    let dec = SVD::try_new(a.clone(), true, true, EIG_EPS, MAX_SWEEPS).ok_or(LinalgError::ConvergenceFailure("svd"))?;
    let (u, v_t) = match (dec.u, dec.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(LinalgError::ConvergenceFailure("svd factors")),
    };
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| dec.singular_values[j].total_cmp(&dec.singular_values[i]));
    let singular_values = order.iter().map(|&i| dec.singular_values[i].max(0.0)).collect();
    let u = CMatrix::from_fn(m, k, |r, j| u[(r, order[j])]);
    let v_adjoint = CMatrix::from_fn(k, n, |j, col| v_t[(order[j], col)]);
    Ok(Svd { u, singular_values, v_adjoint })
}

/// `½ Σ |eig(A - B)|` for Hermitian `A`, `B`.
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> Result<f64, LinalgError> {
    if a.shape() != b.shape() {
        return Err(LinalgError::DimensionMismatch { left: a.nrows(), right: b.nrows() });
    }
    let eig = hermitian_eig(&(a - b))?;
    Ok(0.5 * eig.values.iter().map(|w| w.abs()).sum::<f64>())
}

/// Real part of `Tr(A B)` together with the imaginary residue.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = c(0.0, 0.0);
    for i in 0..n {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// Indices grouped by label, in ascending label order.
fn label_groups(labels: &[i32]) -> Vec<(i32, Vec<usize>)> {
    let mut groups: Vec<(i32, Vec<usize>)> = Vec::new();
    let mut sorted: Vec<usize> = (0..labels.len()).collect();
    sorted.sort_by_key(|&i| labels[i]);
    for i in sorted {
        match groups.last_mut() {
            Some((l, idx)) if *l == labels[i] => idx.push(i),
            _ => groups.push((labels[i], vec![i])),
        }
    }
    groups
}

fn submatrix(a: &CMatrix, rows: &[usize], cols: &[usize]) -> CMatrix {
    CMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// Eigendecomposition of a Hermitian matrix that is block diagonal with
/// respect to `labels` (entries coupling different labels are ignored).
/// Returns the decomposition, ascending overall, and the label of each
/// eigenvector.
pub fn block_hermitian_eig(a: &CMatrix, labels: &[i32]) -> Result<(HermitianEigen, Vec<i32>), LinalgError> {
    let n = a.nrows();
    if labels.len() != n || a.ncols() != n {
        return Err(LinalgError::DimensionMismatch { left: labels.len(), right: n });
    }
    let mut entries: Vec<(f64, i32, DVectorC)> = Vec::with_capacity(n);
    for (label, idx) in label_groups(labels) {
        let eig = hermitian_eig(&submatrix(a, &idx, &idx))?;
        for (k, &w) in eig.values.iter().enumerate() {
            let mut v = DVectorC::zeros(n);
            for (r, &i) in idx.iter().enumerate() {
                v[i] = eig.vectors[(r, k)];
            }
            entries.push((w, label, v));
        }
    }
    entries.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let values = entries.iter().map(|e| e.0).collect();
    let out_labels = entries.iter().map(|e| e.1).collect();
    let vectors = CMatrix::from_fn(n, n, |r, k| entries[k].2[r]);
    Ok((HermitianEigen { values, vectors }, out_labels))
}

/// Singular value decomposition of a matrix whose only non-zero entries
/// connect rows and columns carrying equal labels. Singular values are
/// descending overall; the returned labels tag each singular triplet.
pub fn block_svd(a: &CMatrix, row_labels: &[i32], col_labels: &[i32]) -> Result<(Svd, Vec<i32>), LinalgError> {
    let (m, n) = a.shape();
    if row_labels.len() != m {
        return Err(LinalgError::DimensionMismatch { left: row_labels.len(), right: m });
    }
    if col_labels.len() != n {
        return Err(LinalgError::DimensionMismatch { left: col_labels.len(), right: n });
    }
    let col_groups = label_groups(col_labels);
    let mut entries: Vec<(f64, i32, DVectorC, DVectorC)> = Vec::new();
    for (label, rows) in label_groups(row_labels) {
        let Some((_, cols)) = col_groups.iter().find(|(l, _)| *l == label) else { continue };
        let dec = svd(&submatrix(a, &rows, cols))?;
        for (k, &s) in dec.singular_values.iter().enumerate() {
            let mut u = DVectorC::zeros(m);
            for (r, &i) in rows.iter().enumerate() {
                u[i] = dec.u[(r, k)];
            }
            let mut v = DVectorC::zeros(n);
            for (r, &j) in cols.iter().enumerate() {
                v[j] = dec.v_adjoint[(k, r)];
            }
            entries.push((s, label, u, v));
        }
    }
    entries.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let k = entries.len();
    let singular_values = entries.iter().map(|e| e.0).collect();
    let labels = entries.iter().map(|e| e.1).collect();
    let u = CMatrix::from_fn(m, k, |r, j| entries[j].2[r]);
    let v_adjoint = CMatrix::from_fn(k, n, |j, col| entries[j].3[col]);
    Ok((Svd { u, singular_values, v_adjoint }, labels))
}
