//! Translation-invariant infinite matrix product states.
//!
//! The state is stored with a two-site unit cell `... A B A B ...` so that
//! Trotter gates on even and odd bonds can be applied independently. Each site
//! tensor is kept in right gauge, `B = Γ λ_right`, together with the Schmidt
//! coefficients on both inequivalent bonds. In canonical form the right
//! environment of every bond is the identity and the left environment is
//! `diag(λ²)`, which makes the transfer-matrix fixed points trivial seeds for
//! the power iteration.
//!
//! Site index 0 of the physical leg is spin up (`σ_z = +1`).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::MpsError;
use crate::linalg::{
    block_hermitian_eig, block_svd, c, hermitian_eig, hermitian_part, is_hermitian, svd, CMatrix, Svd, C64,
    HERMITIAN_TOL,
};

/// Hard cap on the number of sites of an extracted density matrix.
pub const MAX_RDM_SITES: usize = 12;
/// Largest operator support accepted by [`expectation_local`].
pub const MAX_LOCAL_SITES: usize = 4;
/// Relative cutoff below which Schmidt values are dropped.
pub const SCHMIDT_CUTOFF: f64 = 1e-12;

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 50_000;
const STAGNATION_WINDOW: usize = 2_000;
const DEGENERACY_GAP: f64 = 1e-10;

/// Sublattice of a site, or of the bond to its right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn index(self) -> usize {
        match self {
            Parity::Even => 0,
            Parity::Odd => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i.is_multiple_of(2) {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    pub fn other(self) -> Self {
        Self::from_index(self.index() + 1)
    }
}

impl std::fmt::Display for Parity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Parity::Even => "even",
            Parity::Odd => "odd",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spin {
    Up,
    Down,
}

/// One site of the unit cell: a pair of bond matrices indexed by the physical
/// spin.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteTensor {
    mats: [CMatrix; 2],
}

impl SiteTensor {
    pub fn new(up: CMatrix, down: CMatrix) -> Result<Self, MpsError> {
        if up.shape() != down.shape() {
            return Err(MpsError::Checkpoint(format!(
                "site matrices disagree in shape: {:?} vs {:?}",
                up.shape(),
                down.shape()
            )));
        }
        Ok(Self { mats: [up, down] })
    }

    pub fn mat(&self, spin: usize) -> &CMatrix {
        &self.mats[spin]
    }

    pub fn left_dim(&self) -> usize {
        self.mats[0].nrows()
    }

    pub fn right_dim(&self) -> usize {
        self.mats[0].ncols()
    }

    pub(crate) fn from_array(mats: [CMatrix; 2]) -> Self {
        Self { mats }
    }
}

/// Σ_s B_s† L B_s
pub fn apply_left(left: &CMatrix, site: &SiteTensor) -> CMatrix {
    let mut out = CMatrix::zeros(site.right_dim(), site.right_dim());
    for b in &site.mats {
        out += b.adjoint() * left * b;
    }
    out
}

/// Σ_s B_s R B_s†
pub fn apply_right(right: &CMatrix, site: &SiteTensor) -> CMatrix {
    let mut out = CMatrix::zeros(site.left_dim(), site.left_dim());
    for b in &site.mats {
        out += b * right * b.adjoint();
    }
    out
}

fn diag_matrix(values: impl Iterator<Item = f64>) -> CMatrix {
    let v: Vec<C64> = values.map(|x| c(x, 0.0)).collect();
    CMatrix::from_diagonal(&DVector::from_vec(v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpsState {
    sites: [SiteTensor; 2],
    /// `bonds[p]` sits to the right of site `p`.
    bonds: [Vec<f64>; 2],
    max_bond_dim: usize,
    canonical: bool,
    /// Optional `S_z` labels (in units of ½) of the Schmidt states on each
    /// bond. When present every tensor operation keeps the state block
    /// diagonal, so the total magnetization is conserved exactly.
    charges: Option<[Vec<i32>; 2]>,
}

/// `σ_z` eigenvalue of physical index `s`.
#[inline]
pub(crate) fn spin_charge(s: usize) -> i32 {
    1 - 2 * s as i32
}

impl MpsState {
    /// Assembles a state from right-gauged site tensors and bond weights. The
    /// result is flagged as not canonical.
    pub fn from_parts(sites: [SiteTensor; 2], bonds: [Vec<f64>; 2], max_bond_dim: usize) -> Result<Self, MpsError> {
        let ok = sites[0].left_dim() == bonds[1].len()
            && sites[0].right_dim() == bonds[0].len()
            && sites[1].left_dim() == bonds[0].len()
            && sites[1].right_dim() == bonds[1].len()
            && !bonds[0].is_empty()
            && !bonds[1].is_empty();
        if !ok {
            return Err(MpsError::Checkpoint("site tensors do not match bond dimensions".into()));
        }
        Ok(Self { sites, bonds, max_bond_dim: max_bond_dim.max(1), canonical: false, charges: None })
    }

    /// Attaches `S_z` labels to both bonds. Every site tensor entry that
    /// connects labels `q_left` and `q_right` must satisfy
    /// `q_right = q_left + σ_z`, up to a relative tolerance.
    pub fn with_charges(mut self, charges: [Vec<i32>; 2]) -> Result<Self, MpsError> {
        for p in [Parity::Even, Parity::Odd] {
            let (ql, qr) = (&charges[p.other().index()], &charges[p.index()]);
            let site = self.site(p);
            if ql.len() != site.left_dim() || qr.len() != site.right_dim() {
                return Err(MpsError::Checkpoint("charge labels do not match bond dimensions".into()));
            }
            let scale = site.mats.iter().map(|m| m.camax()).fold(0.0, f64::max);
            for (s, m) in site.mats.iter().enumerate() {
                for a in 0..m.nrows() {
                    for b in 0..m.ncols() {
                        if qr[b] != ql[a] + spin_charge(s) && m[(a, b)].norm() > 1e-10 * scale {
                            return Err(MpsError::Checkpoint(format!(
                                "site {p} violates charge conservation at ({s}, {a}, {b})"
                            )));
                        }
                    }
                }
            }
        }
        self.charges = Some(charges);
        Ok(self)
    }

    /// Bond `S_z` labels, if the state tracks them.
    pub fn charges(&self) -> Option<&[Vec<i32>; 2]> {
        self.charges.as_ref()
    }

    pub fn site(&self, p: Parity) -> &SiteTensor {
        &self.sites[p.index()]
    }

    /// Schmidt weights on the bond to the right of site `p`.
    pub fn bond(&self, p: Parity) -> &[f64] {
        &self.bonds[p.index()]
    }

    /// Schmidt weights on the bond to the left of site `p`.
    pub fn left_bond(&self, p: Parity) -> &[f64] {
        &self.bonds[p.other().index()]
    }

    /// Current (largest) bond dimension.
    pub fn bond_dim(&self) -> usize {
        self.bonds[0].len().max(self.bonds[1].len())
    }

    pub fn max_bond_dim(&self) -> usize {
        self.max_bond_dim
    }

    pub fn set_max_bond_dim(&mut self, d: usize) {
        self.max_bond_dim = d.max(1);
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical
    }

    pub(crate) fn sites_mut(&mut self) -> &mut [SiteTensor; 2] {
        self.canonical = false;
        &mut self.sites
    }

    /// Replaces the weights (and labels) of bond `p`. Passing no labels
    /// drops charge tracking for the whole state.
    pub(crate) fn replace_bond(&mut self, p: Parity, weights: Vec<f64>, labels: Option<Vec<i32>>) {
        self.canonical = false;
        self.bonds[p.index()] = weights;
        match (labels, self.charges.as_mut()) {
            (Some(l), Some(ch)) => ch[p.index()] = l,
            _ => self.charges = None,
        }
    }

    /// Vidal `Γ` of site `p` (`B λ_right⁻¹`).
    pub fn gamma(&self, p: Parity) -> SiteTensor {
        let lam = self.bond(p);
        let mats = self.site(p).mats.clone().map(|mut m| {
            for (j, &l) in lam.iter().enumerate() {
                let inv = if l > 0.0 { 1.0 / l } else { 0.0 };
                m.column_mut(j).scale_mut(inv);
            }
            m
        });
        SiteTensor { mats }
    }

    /// Brings the state into canonical form; see the module docs.
    pub fn canonicalize(&mut self) -> Result<(), MpsError> {
        let lam_outer = self.bonds[1].clone();
        let dl = lam_outer.len();
        // right-gauged cell tensors M^{s1 s2} = B0^{s1} B1^{s2}
        let mut cell: Vec<CMatrix> = Vec::with_capacity(4);
        for s1 in 0..2 {
            for s2 in 0..2 {
                cell.push(self.sites[0].mat(s1) * self.sites[1].mat(s2));
            }
        }
        let right_map = |x: &CMatrix| {
            let mut out = CMatrix::zeros(dl, dl);
            for m in &cell {
                out += m * x * m.adjoint();
            }
            out
        };
        let left_map = |x: &CMatrix| {
            let mut out = CMatrix::zeros(dl, dl);
            for m in &cell {
                out += m.adjoint() * x * m;
            }
            out
        };
        let vr = hermitian_fixed_point(right_map, CMatrix::identity(dl, dl))?;
        let vl = hermitian_fixed_point(left_map, diag_matrix(lam_outer.iter().map(|l| l * l)))?;

        // VR = X X†, VL = Y† Y
        let outer_labels = self.charges.as_ref().map(|ch| ch[1].clone());
        let (er, right_labels) = labelled_eig(&vr, outer_labels.as_deref())?;
        let (el, left_labels) = labelled_eig(&vl, outer_labels.as_deref())?;
        let dmax_r = er.values.iter().cloned().fold(0.0, f64::max);
        let mut x = er.vectors.clone();
        let mut x_inv = er.vectors.adjoint();
        for (j, &w) in er.values.iter().enumerate() {
            let s = w.max(0.0).sqrt();
            x.column_mut(j).scale_mut(s);
            let inv = if w > 1e-14 * dmax_r { 1.0 / s } else { 0.0 };
            x_inv.row_mut(j).scale_mut(inv);
        }
        let mut y = el.vectors.adjoint();
        for (j, &w) in el.values.iter().enumerate() {
            y.row_mut(j).scale_mut(w.max(0.0).sqrt());
        }

        let labels = left_labels.as_deref().zip(right_labels.as_deref());
        let (dec, new_labels) = labelled_svd(&(&y * &x), labels)?;
        let k = kept_count(&dec.singular_values, self.max_bond_dim.max(dl));
        let new_labels = new_labels.map(|mut l| {
            l.truncate(k);
            l
        });
        let norm = dec.singular_values[..k].iter().map(|s| s * s).sum::<f64>().sqrt();
        let lam_new: Vec<f64> = dec.singular_values[..k].iter().map(|s| s / norm).collect();
        let v_adj = dec.v_adjoint.rows(0, k).into_owned();
        let v = v_adj.adjoint();
        let left_factor = &v_adj * &x_inv;
        let right_factor = &x * &v;
        let mut new_cell: Vec<CMatrix> = cell.iter().map(|m| &left_factor * m * &right_factor).collect();
        let mut eta = CMatrix::zeros(k, k);
        for m in &new_cell {
            eta += m * m.adjoint();
        }
        let scale = (eta.trace().re / k as f64).sqrt();
        if !(scale.is_finite() && scale > 0.0) {
            return Err(MpsError::PowerIterationFailed { residual: f64::NAN });
        }
        for m in &mut new_cell {
            *m /= c(scale, 0.0);
        }

        // split the cell back into two sites through the inner bond
        let mut theta = CMatrix::zeros(2 * k, 2 * k);
        let mut cell_mat = CMatrix::zeros(2 * k, 2 * k);
        for s1 in 0..2 {
            for s2 in 0..2 {
                let m = &new_cell[2 * s1 + s2];
                for a in 0..k {
                    for b in 0..k {
                        cell_mat[(s1 * k + a, s2 * k + b)] = m[(a, b)];
                        theta[(s1 * k + a, s2 * k + b)] = m[(a, b)] * lam_new[a];
                    }
                }
            }
        }
        let split_labels = new_labels.as_ref().map(|q| {
            let rows: Vec<i32> = (0..2).flat_map(|s| q.iter().map(move |&l| l + spin_charge(s))).collect();
            let cols: Vec<i32> = (0..2).flat_map(|s| q.iter().map(move |&l| l - spin_charge(s))).collect();
            (rows, cols)
        });
        let (dec, inner_labels) =
            labelled_svd(&theta, split_labels.as_ref().map(|(r, c)| (r.as_slice(), c.as_slice())))?;
        let k2 = kept_count(&dec.singular_values, self.max_bond_dim.max(self.bonds[0].len()));
        let norm2 = dec.singular_values[..k2].iter().map(|s| s * s).sum::<f64>().sqrt();
        let lam_inner: Vec<f64> = dec.singular_values[..k2].iter().map(|s| s / norm2).collect();
        let v2_adj = dec.v_adjoint.rows(0, k2).into_owned();
        let b0_stacked = &cell_mat * v2_adj.adjoint();
        let b1 = [0, 1].map(|s2| v2_adj.columns(s2 * k, k).into_owned());
        let b0 = [0, 1].map(|s1| b0_stacked.rows(s1 * k, k).into_owned());

        self.sites = [SiteTensor::from_array(b0), SiteTensor::from_array(b1)];
        self.bonds = [lam_inner, lam_new];
        self.charges = inner_labels.zip(new_labels).map(|(mut inner, outer)| {
            inner.truncate(k2);
            [inner, outer]
        });
        self.canonical = true;
        Ok(())
    }

    pub fn canonicalized(mut self) -> Result<Self, MpsError> {
        self.canonicalize()?;
        Ok(self)
    }

    /// Largest deviation of the canonical-form fixed-point conditions: the
    /// identity right environment and `diag(λ²)` left environments of both
    /// bonds.
    pub fn canonical_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for p in [Parity::Even, Parity::Odd] {
            let site = self.site(p);
            let right = apply_right(&CMatrix::identity(site.right_dim(), site.right_dim()), site);
            let id = CMatrix::identity(site.left_dim(), site.left_dim());
            worst = worst.max(crate::linalg::max_abs_diff(&right, &id));
            let l_in = diag_matrix(self.left_bond(p).iter().map(|l| l * l));
            let l_out = diag_matrix(self.bond(p).iter().map(|l| l * l));
            worst = worst.max(crate::linalg::max_abs_diff(&apply_left(&l_in, site), &l_out));
        }
        worst
    }
}

fn labelled_eig(
    m: &CMatrix,
    labels: Option<&[i32]>,
) -> Result<(crate::linalg::HermitianEigen, Option<Vec<i32>>), MpsError> {
    Ok(match labels {
        Some(l) => {
            let (eig, out) = block_hermitian_eig(m, l)?;
            (eig, Some(out))
        }
        None => (hermitian_eig(m)?, None),
    })
}

pub(crate) fn labelled_svd(
    m: &CMatrix,
    labels: Option<(&[i32], &[i32])>,
) -> Result<(Svd, Option<Vec<i32>>), crate::error::LinalgError> {
    Ok(match labels {
        Some((rows, cols)) => {
            let (dec, out) = block_svd(m, rows, cols)?;
            (dec, Some(out))
        }
        None => (svd(m)?, None),
    })
}

/// Number of leading singular values above the relative cutoff, capped at
/// `cap`.
pub(crate) fn kept_count(values: &[f64], cap: usize) -> usize {
    let top = values.first().copied().unwrap_or(0.0);
    values.iter().take(cap.max(1)).take_while(|&&s| s > SCHMIDT_CUTOFF * top).count().max(1)
}

/// Dominant Hermitian fixed point of a positive map, by power iteration on
/// matrices.
fn hermitian_fixed_point(map: impl Fn(&CMatrix) -> CMatrix, seed: CMatrix) -> Result<CMatrix, MpsError> {
    let mut x = seed;
    let norm = x.norm();
    x /= c(norm, 0.0);
    let mut best = f64::INFINITY;
    let mut best_at = 0;
    for it in 0..POWER_MAX_ITER {
        let mut y = hermitian_part(&map(&x));
        let tr = y.trace();
        // fix the arbitrary phase so the fixed point is positive
        if tr.norm() > 0.0 {
            y *= tr.conj() / c(tr.norm(), 0.0);
        }
        let ny = y.norm();
        if !(ny.is_finite() && ny > 0.0) {
            return Err(MpsError::PowerIterationFailed { residual: f64::NAN });
        }
        y /= c(ny, 0.0);
        let diff = (&y - &x).norm();
        x = y;
        if diff <= 1e-14 {
            return Ok(x);
        }
        if diff < 0.9 * best {
            best = diff;
            best_at = it;
        } else if it - best_at > STAGNATION_WINDOW {
            if best <= 1e-10 {
                return Ok(x);
            }
            return Err(MpsError::PowerIterationFailed { residual: diff });
        }
    }
    if best <= 1e-10 {
        Ok(x)
    } else {
        Err(MpsError::PowerIterationFailed { residual: best })
    }
}

/// Uniform product state with every spin `spin`.
pub fn product_mps(spin: Spin) -> MpsState {
    let one = CMatrix::from_element(1, 1, c(1.0, 0.0));
    let zero = CMatrix::from_element(1, 1, c(0.0, 0.0));
    let mats = match spin {
        Spin::Up => [one, zero],
        Spin::Down => [zero, one],
    };
    let site = SiteTensor::from_array(mats);
    MpsState {
        sites: [site.clone(), site],
        bonds: [vec![1.0], vec![1.0]],
        max_bond_dim: 1,
        canonical: true,
        charges: None,
    }
}

/// Néel product state `|↑↓↑↓…⟩` with `S_z` labels attached.
pub fn neel_mps() -> MpsState {
    let one = CMatrix::from_element(1, 1, c(1.0, 0.0));
    let zero = CMatrix::from_element(1, 1, c(0.0, 0.0));
    MpsState {
        sites: [SiteTensor::from_array([one.clone(), zero.clone()]), SiteTensor::from_array([zero, one])],
        bonds: [vec![1.0], vec![1.0]],
        max_bond_dim: 1,
        canonical: true,
        charges: Some([vec![1], vec![0]]),
    }
}

/// Product of singlets on the even bonds, `⊗ (|↑↓⟩ - |↓↑⟩)/√2`, with `S_z`
/// labels attached. It is invariant under spin rotations and spin flip,
/// so imaginary-time evolution from it stays in the symmetric sector.
pub fn singlet_product_mps() -> MpsState {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let m = |entries: [f64; 2], rows: usize| {
        let v: Vec<C64> = entries.iter().map(|&x| c(x, 0.0)).collect();
        if rows == 1 {
            CMatrix::from_row_slice(1, 2, &v)
        } else {
            CMatrix::from_row_slice(2, 1, &v)
        }
    };
    let s0 = SiteTensor::from_array([m([h, 0.0], 1), m([0.0, h], 1)]);
    let s1 = SiteTensor::from_array([m([0.0, -1.0], 2), m([1.0, 0.0], 2)]);
    MpsState {
        sites: [s0, s1],
        bonds: [vec![h, h], vec![1.0]],
        max_bond_dim: 2,
        canonical: true,
        charges: Some([vec![1, -1], vec![0]]),
    }
}

/// Random state of bond dimension `d`, reproducible from `seed`, returned in
/// canonical form.
pub fn random_mps(d: usize, seed: u64) -> Result<MpsState, MpsError> {
    let d = d.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || CMatrix::from_fn(d, d, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let s0 = SiteTensor::from_array([draw(), draw()]);
    let s1 = SiteTensor::from_array([draw(), draw()]);
    let flat = vec![1.0 / (d as f64).sqrt(); d];
    let mut state = MpsState::from_parts([s0, s1], [flat.clone(), flat], d)?;
    state.canonicalize()?;
    Ok(state)
}

#[derive(Debug, Clone)]
pub struct TransferMatrix {
    pub matrix: CMatrix,
}

/// `T_p = Σ_s conj(B_s) ⊗ B_s`
fn site_transfer(site: &SiteTensor) -> CMatrix {
    let mut t = CMatrix::zeros(site.left_dim().pow(2), site.right_dim().pow(2));
    for b in &site.mats {
        t += b.map(|z| z.conj()).kronecker(b);
    }
    t
}

/// Transfer matrix of the unit cell starting at the even site.
pub fn transfer_matrix(state: &MpsState) -> TransferMatrix {
    transfer_matrix_at(state, Parity::Even)
}

/// Transfer matrix of the unit cell starting at site `offset`.
pub fn transfer_matrix_at(state: &MpsState, offset: Parity) -> TransferMatrix {
    let first = site_transfer(state.site(offset));
    let second = site_transfer(state.site(offset.other()));
    TransferMatrix { matrix: first * second }
}

#[derive(Debug, Clone)]
pub struct DominantEigenpair {
    pub value: C64,
    /// Satisfies `leftᵀ T = value leftᵀ` and `leftᵀ right = 1`.
    pub left: DVector<C64>,
    /// Unit norm, first significant component real and positive.
    pub right: DVector<C64>,
    /// Estimated modulus of the subleading eigenvalue (`NaN` for seeded
    /// runs, which skip the degeneracy probe).
    pub subleading: f64,
}

fn probe_vector(n: usize, attempt: usize) -> DVector<C64> {
    // deterministic, generically non-orthogonal to any fixed vector
    DVector::from_fn(n, |i, _| {
        let t = (i as f64 + 1.0) * (0.618_033_988_749_895 + attempt as f64 * 0.414_213_562_373_095);
        c(1.0 + 0.5 * (t.fract() - 0.5), 0.25 * ((t * 1.7).fract() - 0.5))
    })
}

fn fix_phase(v: &mut DVector<C64>) {
    let max = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if let Some(z) = v.iter().find(|z| z.norm() > 1e-8 * max).copied() {
        let phase = z.conj() / c(z.norm(), 0.0);
        *v *= phase;
    }
}

enum PowerOutcome {
    Converged(C64, DVector<C64>),
    Stagnated(f64),
}

fn power_iterate(t: &CMatrix, start: DVector<C64>) -> PowerOutcome {
    let mut v = start;
    let n0 = v.norm();
    v /= c(n0, 0.0);
    let mut best = f64::INFINITY;
    let mut best_at = 0;
    for it in 0..POWER_MAX_ITER {
        let w = t * &v;
        let lambda = v.dotc(&w);
        let residual = (&w - &v * lambda).norm();
        if residual <= POWER_TOL * lambda.norm().max(f64::MIN_POSITIVE) || w.norm() == 0.0 {
            return PowerOutcome::Converged(lambda, v);
        }
        if residual < 0.9 * best {
            best = residual;
            best_at = it;
        } else if it - best_at > STAGNATION_WINDOW {
            return PowerOutcome::Stagnated(best);
        }
        let nw = w.norm();
        v = w / c(nw, 0.0);
    }
    PowerOutcome::Stagnated(best)
}

fn converge(t: &CMatrix, seed: Option<DVector<C64>>) -> Result<(C64, DVector<C64>), MpsError> {
    let n = t.nrows();
    let mut worst = 0.0f64;
    let starts = seed.into_iter().chain((0..4).map(|a| probe_vector(n, a)));
    for start in starts {
        match power_iterate(t, start) {
            PowerOutcome::Converged(l, v) => return Ok((l, v)),
            PowerOutcome::Stagnated(r) => worst = worst.max(r),
        }
    }
    // every restart stalled: competing eigenvalues of equal modulus
    let _ = worst;
    Err(MpsError::DegenerateDominantEigenvalue { gap: 0.0 })
}

fn subleading_modulus(t: &CMatrix, value: C64, left: &DVector<C64>, right: &DVector<C64>) -> f64 {
    let n = t.nrows();
    if n == 1 {
        return 0.0;
    }
    let mut v = probe_vector(n, 7);
    let project = |v: &DVector<C64>| v - right * left.dot(v);
    v = project(&v);
    let mut est = 0.0;
    for _ in 0..300 {
        let nv = v.norm();
        if nv < 1e-300 {
            return 0.0;
        }
        v /= c(nv, 0.0);
        let w = project(&(t * &v - right * (value * left.dot(&v))));
        est = w.norm();
        v = w;
    }
    est
}

fn eigenpair(t: &TransferMatrix, seeds: Option<(DVector<C64>, DVector<C64>)>) -> Result<DominantEigenpair, MpsError> {
    let m = &t.matrix;
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(MpsError::PowerIterationFailed { residual: f64::NAN });
    }
    let (left_seed, right_seed) = match seeds {
        Some((l, r)) => (Some(l), Some(r)),
        None => (None, None),
    };
    let seeded = right_seed.is_some();
    let (value, mut right) = converge(m, right_seed)?;
    let (_, mut left) = converge(&m.transpose(), left_seed)?;
    fix_phase(&mut right);
    let overlap = left.dot(&right);
    if overlap.norm() < 1e-300 {
        return Err(MpsError::DegenerateDominantEigenvalue { gap: 0.0 });
    }
    left /= overlap;
    let subleading = if seeded {
        f64::NAN
    } else {
        let sub = subleading_modulus(m, value, &left, &right);
        let gap = value.norm() - sub;
        if gap < DEGENERACY_GAP {
            return Err(MpsError::DegenerateDominantEigenvalue { gap });
        }
        sub
    };
    Ok(DominantEigenpair { value, left, right, subleading })
}

/// Dominant eigenvalue and left/right eigenvectors by power iteration.
///
/// Fails with [`MpsError::DegenerateDominantEigenvalue`] when the two largest
/// moduli are closer than `1e-10`.
pub fn dominant_eigenpair(t: &TransferMatrix) -> Result<DominantEigenpair, MpsError> {
    eigenpair(t, None)
}

/// Power iteration started from a previous fixed point. A degenerate
/// dominant eigenspace is resolved in favour of the seeds (the iteration
/// preserves their component inside the eigenspace) instead of failing.
pub fn dominant_eigenpair_seeded(
    t: &TransferMatrix,
    left_seed: DVector<C64>,
    right_seed: DVector<C64>,
) -> Result<DominantEigenpair, MpsError> {
    eigenpair(t, Some((left_seed, right_seed)))
}

fn vectorize(m: &CMatrix) -> DVector<C64> {
    // row-major over (bra, ket) to match conj(B) ⊗ B
    let (r, cc) = m.shape();
    DVector::from_fn(r * cc, |i, _| m[(i / cc, i % cc)])
}

fn unvectorize(v: &DVector<C64>, d: usize) -> CMatrix {
    CMatrix::from_fn(d, d, |i, j| v[i * d + j])
}

/// Normalizes a Hermitian positive environment matrix up to an overall
/// complex phase.
fn positive_env(m: CMatrix) -> CMatrix {
    let tr = m.trace();
    let phase = if tr.norm() > 0.0 { tr.conj() / c(tr.norm(), 0.0) } else { c(1.0, 0.0) };
    hermitian_part(&(m * phase))
}

/// Left environment at the bond before site `offset` and right environment at
/// the bond after an `n`-site block, from the unit-cell transfer matrix.
pub(crate) fn block_environments(state: &MpsState, n: usize, offset: Parity) -> Result<(CMatrix, CMatrix), MpsError> {
    if !state.is_canonical() {
        return Err(MpsError::NotCanonicalized);
    }
    let t = transfer_matrix_at(state, offset);
    let d = state.site(offset).left_dim();
    let left_seed = vectorize(&diag_matrix(state.left_bond(offset).iter().map(|l| l * l)));
    let right_seed = vectorize(&CMatrix::identity(d, d));
    let pair = dominant_eigenpair_seeded(&t, left_seed, right_seed)?;
    let left = positive_env(unvectorize(&pair.left, d));
    let mut right = positive_env(unvectorize(&pair.right, d).transpose());
    if n % 2 == 1 {
        right = positive_env(apply_right(&right, state.site(offset.other())));
    }
    Ok((left, right))
}

fn hermitian_sqrt(m: &CMatrix) -> Result<CMatrix, MpsError> {
    let eig = hermitian_eig(m)?;
    Ok(eig.map(|w| c(w.max(0.0).sqrt(), 0.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedDensityMatrix {
    n: usize,
    offset: Parity,
    matrix: CMatrix,
}

impl ReducedDensityMatrix {
    /// Validates a `2^n × 2^n` Hermitian matrix and normalizes its trace.
    pub fn from_matrix(matrix: CMatrix) -> Result<Self, MpsError> {
        let dim = matrix.nrows();
        if matrix.ncols() != dim || !dim.is_power_of_two() || dim < 2 {
            return Err(MpsError::InvalidOperator { dim, max_sites: MAX_RDM_SITES });
        }
        let n = dim.trailing_zeros() as usize;
        if n > MAX_RDM_SITES {
            return Err(MpsError::InvalidSiteCount { n, max: MAX_RDM_SITES });
        }
        let deviation = crate::linalg::hermitian_deviation(&matrix);
        if deviation > HERMITIAN_TOL {
            return Err(crate::error::LinalgError::NotHermitian { deviation }.into());
        }
        Ok(Self { n, offset: Parity::Even, matrix: normalize_density(matrix) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Unit-cell offset of the first site of the block.
    pub fn offset(&self) -> Parity {
        self.offset
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn min_eigenvalue(&self) -> Result<f64, MpsError> {
        Ok(hermitian_eig(&self.matrix)?.values[0])
    }

    /// Traces out the last site.
    pub fn partial_trace_last(&self) -> Result<Self, MpsError> {
        if self.n < 2 {
            return Err(MpsError::InvalidSiteCount { n: self.n - 1, max: MAX_RDM_SITES });
        }
        let d = 1usize << (self.n - 1);
        let m = CMatrix::from_fn(d, d, |i, j| self.matrix[(2 * i, 2 * j)] + self.matrix[(2 * i + 1, 2 * j + 1)]);
        Ok(Self { n: self.n - 1, offset: self.offset, matrix: m })
    }

    /// Traces out the first site.
    pub fn partial_trace_first(&self) -> Result<Self, MpsError> {
        if self.n < 2 {
            return Err(MpsError::InvalidSiteCount { n: self.n - 1, max: MAX_RDM_SITES });
        }
        let d = 1usize << (self.n - 1);
        let m = CMatrix::from_fn(d, d, |i, j| self.matrix[(i, j)] + self.matrix[(d + i, d + j)]);
        Ok(Self { n: self.n - 1, offset: self.offset.other(), matrix: m })
    }

    /// Average with another density matrix of the same size.
    pub fn mix(&self, other: &Self) -> Result<Self, MpsError> {
        if self.n != other.n {
            return Err(crate::error::LinalgError::DimensionMismatch { left: self.n, right: other.n }.into());
        }
        let m = (&self.matrix + &other.matrix) * c(0.5, 0.0);
        Ok(Self { n: self.n, offset: self.offset, matrix: m })
    }
}

fn normalize_density(m: CMatrix) -> CMatrix {
    let h = hermitian_part(&m);
    let tr = h.trace().re;
    h / c(tr, 0.0)
}

/// `n`-site reduced density matrix of the block starting at the even site.
pub fn reduced_density_matrix(state: &MpsState, n: usize) -> Result<ReducedDensityMatrix, MpsError> {
    reduced_density_matrix_at(state, n, Parity::Even)
}

/// `n`-site reduced density matrix averaged over both unit-cell offsets.
/// Symmetric critical states on a two-site cell are weakly dimerized, so a
/// single offset carries a staggered bias that the average removes.
pub fn averaged_reduced_density_matrix(state: &MpsState, n: usize) -> Result<ReducedDensityMatrix, MpsError> {
    reduced_density_matrix_at(state, n, Parity::Even)?.mix(&reduced_density_matrix_at(state, n, Parity::Odd)?)
}

/// `n`-site reduced density matrix of the block starting at site `offset`:
/// `⟨j|ρ|i⟩ = ⟨L| conj(A_i) ⊗ A_j |R⟩` with the environments taken as the
/// dominant eigenvectors of the unit-cell transfer matrix.
pub fn reduced_density_matrix_at(state: &MpsState, n: usize, offset: Parity) -> Result<ReducedDensityMatrix, MpsError> {
    if n == 0 || n > MAX_RDM_SITES {
        return Err(MpsError::InvalidSiteCount { n, max: MAX_RDM_SITES });
    }
    let (left, right) = block_environments(state, n, offset)?;
    let l_half = hermitian_sqrt(&left)?;
    let r_half = hermitian_sqrt(&right)?;

    // Ψ_j = √L B_{j1} ... B_{jn} √R, one row per basis string j
    let mut prefixes = vec![l_half];
    for k in 0..n {
        let site = state.site(Parity::from_index(offset.index() + k));
        let mut next = Vec::with_capacity(prefixes.len() * 2);
        for p in &prefixes {
            next.push(p * site.mat(0));
            next.push(p * site.mat(1));
        }
        prefixes = next;
    }
    let dl = prefixes[0].nrows();
    let dr = r_half.ncols();
    let mut psi = CMatrix::zeros(prefixes.len(), dl * dr);
    for (j, p) in prefixes.iter().enumerate() {
        let full = p * &r_half;
        for a in 0..dl {
            for b in 0..dr {
                psi[(j, a * dr + b)] = full[(a, b)];
            }
        }
    }
    let rho = &psi * psi.adjoint();
    Ok(ReducedDensityMatrix { n, offset, matrix: normalize_density(rho) })
}

/// Expectation of a Hermitian operator on `k ≤ 4` consecutive sites starting
/// at a site of parity `start`, contracted through the doubled environment.
pub fn expectation_local(state: &MpsState, op: &CMatrix, start: Parity) -> Result<f64, MpsError> {
    let dim = op.nrows();
    if op.ncols() != dim || !dim.is_power_of_two() || !(2..=1 << MAX_LOCAL_SITES).contains(&dim) {
        return Err(MpsError::InvalidOperator { dim, max_sites: MAX_LOCAL_SITES });
    }
    if !is_hermitian(op, HERMITIAN_TOL) {
        return Err(
            crate::error::LinalgError::NotHermitian { deviation: crate::linalg::hermitian_deviation(op) }.into()
        );
    }
    let k = dim.trailing_zeros() as usize;
    let (left, right) = block_environments(state, k, start)?;
    // envs[(i, j)] = c_i† L c_j over bra string i and ket string j
    let mut envs = vec![left.clone()];
    let mut width = 1usize;
    for t in 0..k {
        let site = state.site(Parity::from_index(start.index() + t));
        let mut next = vec![CMatrix::zeros(0, 0); width * width * 4];
        for i in 0..width {
            for j in 0..width {
                let e = &envs[i * width + j];
                for si in 0..2 {
                    let bra = site.mat(si).adjoint() * e;
                    for sj in 0..2 {
                        next[(2 * i + si) * (2 * width) + (2 * j + sj)] = &bra * site.mat(sj);
                    }
                }
            }
        }
        envs = next;
        width *= 2;
    }
    let norm = crate::linalg::trace_product(&left, &right);
    let mut acc = c(0.0, 0.0);
    for i in 0..dim {
        for j in 0..dim {
            if op[(i, j)] != c(0.0, 0.0) {
                acc += op[(i, j)] * crate::linalg::trace_product(&envs[i * dim + j], &right);
            }
        }
    }
    let value = acc / norm;
    let scale = op.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if value.im.abs() > 1e-10 * scale {
        return Err(MpsError::ImaginaryResidue { residue: value.im });
    }
    Ok(value.re)
}

/// Provenance stored alongside a checkpointed state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckpointMeta {
    pub delta: f64,
    pub seed: u64,
    pub converged: bool,
    pub final_energy_per_site: f64,
    pub truncation_error_max: f64,
    pub steps_taken: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpsCheckpoint {
    pub state: MpsState,
    pub meta: CheckpointMeta,
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MPSCHK1\n";

fn put_u64(w: &mut impl Write, x: u64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}
fn put_f64(w: &mut impl Write, x: f64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}
fn get_u64(r: &mut impl Read) -> Result<u64, MpsError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
fn get_f64(r: &mut impl Read) -> Result<f64, MpsError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
fn get_len(r: &mut impl Read, limit: u64, what: &str) -> Result<usize, MpsError> {
    let v = get_u64(r)?;
    if v > limit {
        return Err(MpsError::Checkpoint(format!("{what} = {v} exceeds {limit}")));
    }
    Ok(v as usize)
}

impl MpsCheckpoint {
    /// Little-endian binary layout: magic, metadata, both bond-weight vectors,
    /// then both sites as `(rows, cols, up entries, down entries)` with each
    /// complex entry stored as `(re, im)` in row-major order, and finally a
    /// tag byte optionally followed by the `i32` charge labels of both bonds.
    pub fn write_to(&self, w: &mut impl Write) -> Result<(), MpsError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let m = &self.meta;
        put_f64(w, m.delta)?;
        put_u64(w, m.seed)?;
        put_u64(w, self.state.max_bond_dim as u64)?;
        w.write_all(&[m.converged as u8, self.state.canonical as u8])?;
        put_f64(w, m.final_energy_per_site)?;
        put_f64(w, m.truncation_error_max)?;
        put_u64(w, m.steps_taken.len() as u64)?;
        for &s in &m.steps_taken {
            put_u64(w, s)?;
        }
        for bond in &self.state.bonds {
            put_u64(w, bond.len() as u64)?;
            for &x in bond {
                put_f64(w, x)?;
            }
        }
        for site in &self.state.sites {
            put_u64(w, site.left_dim() as u64)?;
            put_u64(w, site.right_dim() as u64)?;
            for mat in &site.mats {
                for i in 0..mat.nrows() {
                    for j in 0..mat.ncols() {
                        put_f64(w, mat[(i, j)].re)?;
                        put_f64(w, mat[(i, j)].im)?;
                    }
                }
            }
        }
        match &self.state.charges {
            None => w.write_all(&[0])?,
            Some(ch) => {
                w.write_all(&[1])?;
                for labels in ch {
                    for &q in labels {
                        w.write_all(&q.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, MpsError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(MpsError::Checkpoint("bad magic header".into()));
        }
        let delta = get_f64(r)?;
        let seed = get_u64(r)?;
        let max_bond_dim = get_len(r, 1 << 16, "max bond dimension")?;
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let final_energy_per_site = get_f64(r)?;
        let truncation_error_max = get_f64(r)?;
        let n_stages = get_len(r, 1 << 16, "stage count")?;
        let steps_taken = (0..n_stages).map(|_| get_u64(r)).collect::<Result<Vec<_>, _>>()?;
        let mut bonds: [Vec<f64>; 2] = [vec![], vec![]];
        for bond in &mut bonds {
            let len = get_len(r, 1 << 16, "bond length")?;
            *bond = (0..len).map(|_| get_f64(r)).collect::<Result<_, _>>()?;
        }
        let mut sites = Vec::with_capacity(2);
        for _ in 0..2 {
            let rows = get_len(r, 1 << 16, "rows")?;
            let cols = get_len(r, 1 << 16, "cols")?;
            let mut mats = Vec::with_capacity(2);
            for _ in 0..2 {
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows * cols {
                    let re = get_f64(r)?;
                    let im = get_f64(r)?;
                    data.push(c(re, im));
                }
                mats.push(CMatrix::from_row_slice(rows, cols, &data));
            }
            let down = mats.pop().unwrap();
            let up = mats.pop().unwrap();
            sites.push(SiteTensor::new(up, down)?);
        }
        let s1 = sites.pop().unwrap();
        let s0 = sites.pop().unwrap();
        let mut state = MpsState::from_parts([s0, s1], bonds, max_bond_dim)?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        if tag[0] == 1 {
            let mut charges: [Vec<i32>; 2] = [vec![], vec![]];
            for (p, labels) in charges.iter_mut().enumerate() {
                for _ in 0..state.bonds[p].len() {
                    let mut b = [0u8; 4];
                    r.read_exact(&mut b)?;
                    labels.push(i32::from_le_bytes(b));
                }
            }
            state = state.with_charges(charges)?;
        } else if tag[0] != 0 {
            return Err(MpsError::Checkpoint("bad charge tag".into()));
        }
        state.canonical = flags[1] != 0;
        let meta = CheckpointMeta {
            delta,
            seed,
            converged: flags[0] != 0,
            final_energy_per_site,
            truncation_error_max,
            steps_taken,
        };
        Ok(Self { state, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MpsError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MpsError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}
