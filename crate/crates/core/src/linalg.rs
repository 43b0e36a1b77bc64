//! Dense complex matrix primitives for small Hermitian systems.
//!
//! Every matrix in this crate is square with dimension equal to the number of
//! microphones (2 to 16 in practice), so storage is dense and row-major. The
//! allocation-free routines in [`kernels`] back the per-slot inner loops of the
//! solvers; the structured types ([`HermitianMatrix`], [`ComplexVector`]) are
//! used for everything computed once per frequency bin.

use std::ops::{Deref, DerefMut, Index, IndexMut};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Relative threshold below which an eigenvalue counts as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Relative tolerance for the Hermitian-symmetry check.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComplexVector(Vec<C64>);

impl ComplexVector {
    pub fn new(entries: Vec<C64>) -> Self {
        ComplexVector(entries)
    }

    pub fn zeros(dim: usize) -> Self {
        ComplexVector(vec![C64::new(0.0, 0.0); dim])
    }

    /// Unit vector along coordinate `k`.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[k] = C64::new(1.0, 0.0);
        v
    }

    pub fn from_real(entries: &[f64]) -> Self {
        ComplexVector(entries.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `self^H other`
    pub fn dot(&self, other: &[C64]) -> C64 {
        kernels::dot_h(&self.0, other)
    }

    pub fn scaled(&self, s: C64) -> Self {
        ComplexVector(self.0.iter().map(|z| z * s).collect())
    }

    pub fn into_inner(self) -> Vec<C64> {
        self.0
    }
}

impl Deref for ComplexVector {
    type Target = [C64];
    fn deref(&self) -> &[C64] {
        &self.0
    }
}

impl DerefMut for ComplexVector {
    fn deref_mut(&mut self) -> &mut [C64] {
        &mut self.0
    }
}

/// Square dense complex matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        CMatrix {
            dim,
            data: vec![C64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for k in 0..dim {
            m[(k, k)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for p in 0..dim {
            for q in 0..dim {
                data.push(f(p, q));
            }
        }
        CMatrix { dim, data }
    }

    pub fn from_row_major(dim: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::invalid(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        Ok(CMatrix { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn row(&self, p: usize) -> &[C64] {
        &self.data[p * self.dim..(p + 1) * self.dim]
    }

    pub fn column(&self, q: usize) -> ComplexVector {
        ComplexVector((0..self.dim).map(|p| self[(p, q)]).collect())
    }

    pub fn adjoint(&self) -> CMatrix {
        CMatrix::from_fn(self.dim, |p, q| self[(q, p)].conj())
    }

    pub fn mul(&self, other: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim);
        kernels::matmul_into(&self.data, &other.data, self.dim, &mut out.data);
        out
    }

    pub fn mul_vec(&self, x: &[C64]) -> ComplexVector {
        let mut out = ComplexVector::zeros(self.dim);
        kernels::matvec_into(&self.data, x, self.dim, &mut out);
        out
    }

    pub fn sub(&self, other: &CMatrix) -> CMatrix {
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|k| self[(k, k)]).sum()
    }

    /// General inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<CMatrix> {
        let n = self.dim;
        let mut a = self.data.clone();
        let mut inv = CMatrix::identity(n).data;
        let scale = self.frobenius_norm().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&r, &s| a[r * n + col].norm().total_cmp(&a[s * n + col].norm()))
                .unwrap_or(col);
            if a[pivot * n + col].norm() <= 1e-14 * scale {
                return Err(Error::numerical(
                    format!("column {col}"),
                    "singular matrix in inversion",
                ));
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(pivot * n + k, col * n + k);
                    inv.swap(pivot * n + k, col * n + k);
                }
            }
            let d = a[col * n + col].inv();
            for k in 0..n {
                a[col * n + k] *= d;
                inv[col * n + k] *= d;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[r * n + col];
                if f == C64::new(0.0, 0.0) {
                    continue;
                }
                for k in 0..n {
                    let (ak, ik) = (a[col * n + k], inv[col * n + k]);
                    a[r * n + k] -= f * ak;
                    inv[r * n + k] -= f * ik;
                }
            }
        }
        Ok(CMatrix { dim: n, data: inv })
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (p, q): (usize, usize)) -> &C64 {
        &self.data[p * self.dim + q]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (p, q): (usize, usize)) -> &mut C64 {
        &mut self.data[p * self.dim + q]
    }
}

/// A complex matrix equal to its own conjugate transpose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CMatrix", into = "CMatrix")]
pub struct HermitianMatrix(CMatrix);

impl TryFrom<CMatrix> for HermitianMatrix {
    type Error = Error;
    fn try_from(m: CMatrix) -> Result<Self> {
        HermitianMatrix::new(m)
    }
}

impl From<HermitianMatrix> for CMatrix {
    fn from(h: HermitianMatrix) -> CMatrix {
        h.0
    }
}

impl HermitianMatrix {
    /// Validates symmetry and stores the exactly-symmetrized matrix.
    pub fn new(m: CMatrix) -> Result<Self> {
        let scale = m.frobenius_norm();
        let n = m.dim();
        let mut worst = 0.0_f64;
        for p in 0..n {
            for q in p..n {
                worst = worst.max((m[(p, q)] - m[(q, p)].conj()).norm());
            }
        }
        if worst > HERMITIAN_TOL * scale.max(f64::MIN_POSITIVE) && worst > 0.0 {
            return Err(Error::invalid(format!(
                "matrix is not Hermitian (asymmetry {worst:e}, norm {scale:e})"
            )));
        }
        Ok(Self::symmetrized(m))
    }

    /// Averages `m` with its adjoint; no tolerance check.
    pub fn symmetrized(m: CMatrix) -> Self {
        let n = m.dim();
        let out = CMatrix::from_fn(n, |p, q| {
            if p == q {
                C64::new(m[(p, p)].re, 0.0)
            } else {
                (m[(p, q)] + m[(q, p)].conj()) * 0.5
            }
        });
        HermitianMatrix(out)
    }

    pub fn zeros(dim: usize) -> Self {
        HermitianMatrix(CMatrix::zeros(dim))
    }

    pub fn identity(dim: usize) -> Self {
        HermitianMatrix(CMatrix::identity(dim))
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = CMatrix::zeros(values.len());
        for (k, &v) in values.iter().enumerate() {
            m[(k, k)] = C64::new(v, 0.0);
        }
        HermitianMatrix(m)
    }

    /// `scale * v v^H`
    pub fn outer(v: &[C64], scale: f64) -> Self {
        HermitianMatrix(CMatrix::from_fn(v.len(), |p, q| v[p] * v[q].conj() * scale))
    }

    /// `self + scale * v v^H`
    pub fn plus_outer(&self, v: &[C64], scale: f64) -> Self {
        let mut out = self.clone();
        kernels::add_outer(out.0.as_mut_slice(), v, scale);
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for z in out.0.as_mut_slice() {
            *z *= s;
        }
        out
    }

    pub fn add(&self, other: &HermitianMatrix) -> Self {
        let mut out = self.clone();
        for (z, w) in out.0.as_mut_slice().iter_mut().zip(other.as_slice()) {
            *z += w;
        }
        out
    }

    /// Unitary similarity `U diag(values) U^H`.
    pub fn from_eigen(values: &[f64], vectors: &[ComplexVector]) -> Self {
        let n = values.len();
        let mut m = CMatrix::zeros(n);
        for (lam, v) in values.iter().zip(vectors) {
            kernels::add_outer(m.as_mut_slice(), v, *lam);
        }
        HermitianMatrix::symmetrized(m)
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn as_slice(&self) -> &[C64] {
        self.0.as_slice()
    }

    pub fn get(&self, p: usize, q: usize) -> C64 {
        self.0[(p, q)]
    }

    /// `x^H self y`
    pub fn quad(&self, x: &[C64], y: &[C64]) -> C64 {
        kernels::quad_form(x, self.as_slice(), y, self.dim())
    }

    pub fn mul_vec(&self, x: &[C64]) -> ComplexVector {
        self.0.mul_vec(x)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.frobenius_norm()
    }

    /// Inverse of a positive-definite matrix via Cholesky factorization.
    pub fn inverse_pd(&self) -> Result<HermitianMatrix> {
        let n = self.dim();
        let mut out = CMatrix::zeros(n);
        let mut work = vec![C64::new(0.0, 0.0); n * n];
        if !kernels::hpd_inverse_into(self.as_slice(), n, out.as_mut_slice(), &mut work) {
            return Err(Error::numerical(
                "Cholesky factorization",
                "matrix is not positive definite",
            ));
        }
        Ok(HermitianMatrix(out))
    }
}

/// Real eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<ComplexVector>,
}

pub fn hermitian_eig(h: &HermitianMatrix) -> HermitianEigen {
    let n = h.dim();
    let dense = DMatrix::from_fn(n, n, |p, q| h.get(p, q));
    let eig = SymmetricEigen::new(dense);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = order
        .iter()
        .map(|&k| {
            let mut v = ComplexVector((0..n).map(|p| eig.eigenvectors[(p, k)]).collect());
            fix_phase(&mut v);
            v
        })
        .collect();
    HermitianEigen { values, vectors }
}

/// Checked variant of [`hermitian_eig`] for raw matrices.
pub fn hermitian_eig_checked(m: &CMatrix) -> Result<HermitianEigen> {
    Ok(hermitian_eig(&HermitianMatrix::new(m.clone())?))
}

/// Rotates `v` so its first non-negligible entry is real and positive.
fn fix_phase(v: &mut ComplexVector) {
    let norm = v.norm();
    if let Some(first) = v.iter().find(|z| z.norm() > 1e-10 * norm).copied() {
        let phase = first.conj() / first.norm();
        for z in v.iter_mut() {
            *z *= phase;
        }
    }
}

fn spectral_scale(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn pseudo_inverse_psd(h: &HermitianMatrix, rank_tol: f64) -> Result<HermitianMatrix> {
    let eig = hermitian_eig(h);
    let max_eig = eig.values.last().copied().unwrap_or(0.0);
    let scale = spectral_scale(&eig.values);
    let threshold = rank_tol * scale;
    if let Some(&min_eig) = eig.values.first() {
        if min_eig < -threshold {
            return Err(Error::NotPsd { min_eig, max_eig });
        }
    }
    let mut m = CMatrix::zeros(h.dim());
    for (lam, v) in eig.values.iter().zip(&eig.vectors) {
        if *lam > threshold {
            kernels::add_outer(m.as_mut_slice(), v, 1.0 / lam);
        }
    }
    Ok(HermitianMatrix::symmetrized(m))
}

/// Unit eigenvector spanning the one-dimensional null space of `r_prime`.
pub fn null_eigenvector(r_prime: &HermitianMatrix, rank_tol: f64) -> Result<ComplexVector> {
    let eig = hermitian_eig(r_prime);
    let threshold = rank_tol * spectral_scale(&eig.values);
    let found = eig.values.iter().filter(|&&v| v <= threshold).count();
    if found != 1 {
        return Err(Error::RankMismatch { found });
    }
    Ok(eig.vectors.into_iter().next().expect("nonempty spectrum"))
}

/// `(c a a^H + d R)^{-1}` from `R^{-1}` by the Sherman-Morrison formula.
pub fn sherman_morrison_inverse(
    r_inv: &HermitianMatrix,
    a: &[C64],
    c: f64,
    d: f64,
) -> Result<HermitianMatrix> {
    if !(d > 0.0) {
        return Err(Error::InvalidVariance(format!("noise variance must be positive, got {d}")));
    }
    if !(c >= 0.0) {
        return Err(Error::InvalidVariance(format!(
            "target variance must be nonnegative, got {c}"
        )));
    }
    let u = r_inv.mul_vec(a);
    let rho = kernels::dot_h(a, &u).re;
    let coef = c / (d + c * rho);
    let mut m = r_inv.as_matrix().clone();
    kernels::add_outer(m.as_mut_slice(), &u, -coef);
    for z in m.as_mut_slice() {
        *z /= d;
    }
    Ok(HermitianMatrix::symmetrized(m))
}

/// `(R' + lambda b b^H)^{-1}` given `R'^+` and the unit null vector `b` of `R'`.
pub fn rank_one_restored_inverse(
    r_prime_pinv: &HermitianMatrix,
    b: &[C64],
    lambda: f64,
) -> Result<HermitianMatrix> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidVariance(format!("eigenvalue must be positive, got {lambda}")));
    }
    let b_norm = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if (b_norm - 1.0).abs() > 1e-10 {
        return Err(Error::Inconsistent(format!("null vector has norm {b_norm}, expected 1")));
    }
    let residual = r_prime_pinv.mul_vec(b).norm();
    if residual > 1e-8 * r_prime_pinv.frobenius_norm().max(1.0) {
        return Err(Error::Inconsistent(format!(
            "vector is not in the null space of the pseudoinverse (residual {residual:e})"
        )));
    }
    Ok(r_prime_pinv.plus_outer(b, 1.0 / lambda))
}

/// Allocation-free routines over row-major `m x m` slices.
pub mod kernels {
    use super::C64;

    const ZERO: C64 = C64::new(0.0, 0.0);

    /// `x^H y`
    #[inline]
    pub fn dot_h(x: &[C64], y: &[C64]) -> C64 {
        x.iter().zip(y).fold(ZERO, |acc, (a, b)| acc + a.conj() * b)
    }

    /// `x^H A y`
    #[inline]
    pub fn quad_form(x: &[C64], a: &[C64], y: &[C64], m: usize) -> C64 {
        let mut acc = ZERO;
        for p in 0..m {
            let row = &a[p * m..(p + 1) * m];
            let ay: C64 = row.iter().zip(y).fold(ZERO, |s, (r, v)| s + r * v);
            acc += x[p].conj() * ay;
        }
        acc
    }

    /// `x^H A x` for Hermitian `A`, returned as a real number.
    #[inline]
    pub fn quad_form_real(x: &[C64], a: &[C64], m: usize) -> f64 {
        quad_form(x, a, x, m).re
    }

    #[inline]
    pub fn matvec_into(a: &[C64], x: &[C64], m: usize, out: &mut [C64]) {
        for p in 0..m {
            let row = &a[p * m..(p + 1) * m];
            out[p] = row.iter().zip(x).fold(ZERO, |s, (r, v)| s + r * v);
        }
    }

    /// `out = A B`
    pub fn matmul_into(a: &[C64], b: &[C64], m: usize, out: &mut [C64]) {
        out[..m * m].fill(ZERO);
        for p in 0..m {
            for k in 0..m {
                let apk = a[p * m + k];
                let brow = &b[k * m..(k + 1) * m];
                let orow = &mut out[p * m..(p + 1) * m];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += apk * bv;
                }
            }
        }
    }

    /// `A += scale * v v^H`
    #[inline]
    pub fn add_outer(a: &mut [C64], v: &[C64], scale: f64) {
        let m = v.len();
        for p in 0..m {
            let vp = v[p] * scale;
            for q in 0..m {
                a[p * m + q] += vp * v[q].conj();
            }
        }
    }

    /// In-place lower Cholesky factor `A = L L^H`; the strict upper triangle is
    /// left untouched. Returns false when `A` is not numerically positive definite.
    pub fn cholesky_in_place(a: &mut [C64], m: usize) -> bool {
        for j in 0..m {
            let mut d = a[j * m + j].re;
            for k in 0..j {
                d -= a[j * m + k].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return false;
            }
            let d = d.sqrt();
            a[j * m + j] = C64::new(d, 0.0);
            let inv_d = 1.0 / d;
            for i in j + 1..m {
                let mut s = a[i * m + j];
                for k in 0..j {
                    s -= a[i * m + k] * a[j * m + k].conj();
                }
                a[i * m + j] = s * inv_d;
            }
        }
        true
    }

    /// Inverse of a Hermitian positive-definite matrix via `A^{-1} = L^{-H} L^{-1}`.
    /// `work` must hold `m * m` entries. Returns false when `A` is not positive definite.
    pub fn hpd_inverse_into(a: &[C64], m: usize, out: &mut [C64], work: &mut [C64]) -> bool {
        let l = &mut work[..m * m];
        l.copy_from_slice(&a[..m * m]);
        if !cholesky_in_place(l, m) {
            return false;
        }
        // Lower-triangular inverse, stored in the lower triangle of `out`.
        out[..m * m].fill(ZERO);
        for j in 0..m {
            out[j * m + j] = C64::new(1.0 / l[j * m + j].re, 0.0);
            for i in j + 1..m {
                let mut s = ZERO;
                for k in j..i {
                    s -= l[i * m + k] * out[k * m + j];
                }
                out[i * m + j] = s / l[i * m + i].re;
            }
        }
        // out = Linv^H Linv, accumulated into `l` then copied back.
        for p in 0..m {
            for q in 0..=p {
                let mut s = ZERO;
                for k in p..m {
                    s += out[k * m + p].conj() * out[k * m + q];
                }
                l[p * m + q] = s;
            }
        }
        for p in 0..m {
            for q in 0..=p {
                out[p * m + q] = l[p * m + q];
                out[q * m + p] = l[p * m + q].conj();
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rel_frob(a: &CMatrix, b: &CMatrix) -> f64 {
        a.sub(b).frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    /// Deterministic pseudo-random Hermitian PD matrix for unit tests.
    fn lcg_matrix(n: usize, seed: u64) -> CMatrix {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        CMatrix::from_fn(n, |_, _| c(next(), next()))
    }

    fn random_hpd(n: usize, seed: u64) -> HermitianMatrix {
        let g = lcg_matrix(n, seed);
        let mut m = g.mul(&g.adjoint());
        for k in 0..n {
            m[(k, k)] += c(0.5, 0.0);
        }
        HermitianMatrix::new(m).unwrap()
    }

    #[test]
    fn eig_of_identity_and_diagonal() {
        let e = hermitian_eig(&HermitianMatrix::identity(2));
        assert_eq!(e.values, vec![1.0, 1.0]);

        let e = hermitian_eig(&HermitianMatrix::diag(&[3.0, 1.0]));
        assert!((e.values[0] - 1.0).abs() < 1e-14 && (e.values[1] - 3.0).abs() < 1e-14);
        assert!((e.vectors[0][1] - c(1.0, 0.0)).norm() < 1e-14);
        assert!((e.vectors[1][0] - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn eig_reconstructs_random_hermitian() {
        let g = lcg_matrix(4, 7);
        let h = HermitianMatrix::symmetrized(g.mul(&g.adjoint()).sub(&CMatrix::identity(4)));
        let e = hermitian_eig(&h);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        let rebuilt = HermitianMatrix::from_eigen(&e.values, &e.vectors);
        assert!(rel_frob(rebuilt.as_matrix(), h.as_matrix()) < 1e-10);
        for (p, u) in e.vectors.iter().enumerate() {
            for (q, v) in e.vectors.iter().enumerate() {
                let expect = if p == q { 1.0 } else { 0.0 };
                assert!((u.dot(v) - c(expect, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut m = CMatrix::identity(2);
        m[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(HermitianMatrix::new(m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pinv_diagonal_and_projector() {
        let p = pseudo_inverse_psd(&HermitianMatrix::diag(&[2.0, 0.0]), DEFAULT_RANK_TOL).unwrap();
        assert!(rel_frob(p.as_matrix(), HermitianMatrix::diag(&[0.5, 0.0]).as_matrix()) < 1e-15);

        let b = ComplexVector::new(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let proj = HermitianMatrix::outer(&b, 1.0);
        let p = pseudo_inverse_psd(&proj, DEFAULT_RANK_TOL).unwrap();
        assert!(rel_frob(p.as_matrix(), proj.as_matrix()) < 1e-12);
    }

    #[test]
    fn pinv_of_full_rank_is_inverse() {
        let h = random_hpd(4, 3);
        let p = pseudo_inverse_psd(&h, DEFAULT_RANK_TOL).unwrap();
        let prod = h.as_matrix().mul(p.as_matrix());
        assert!(prod.sub(&CMatrix::identity(4)).frobenius_norm() < 1e-10);
        let hph = prod.mul(h.as_matrix());
        assert!(rel_frob(&hph, h.as_matrix()) < 1e-9);
    }

    #[test]
    fn pinv_rejects_indefinite() {
        let h = HermitianMatrix::diag(&[1.0, -0.5]);
        assert!(matches!(pseudo_inverse_psd(&h, DEFAULT_RANK_TOL), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn null_vector_of_diagonal() {
        let b = null_eigenvector(&HermitianMatrix::diag(&[1.0, 2.0, 0.0]), DEFAULT_RANK_TOL).unwrap();
        assert!((b[2] - c(1.0, 0.0)).norm() < 1e-14);
        assert!(b[0].norm() < 1e-14 && b[1].norm() < 1e-14);
    }

    #[test]
    fn null_vector_of_rotated_diagonal() {
        let g = lcg_matrix(3, 11);
        let e = hermitian_eig(&HermitianMatrix::symmetrized(g.mul(&g.adjoint())));
        let basis = e.vectors;
        let r = HermitianMatrix::from_eigen(&[1.0, 2.0, 0.0], &basis);
        let b = null_eigenvector(&r, DEFAULT_RANK_TOL).unwrap();
        // Same direction as the third basis vector up to phase.
        assert!((b.dot(&basis[2]).norm() - 1.0).abs() < 1e-10);
        assert!(r.mul_vec(&b).norm() < 1e-8 * 2.0);
        let first = b.iter().find(|z| z.norm() > 1e-10).unwrap();
        assert!(first.im.abs() < 1e-14 && first.re > 0.0);
    }

    #[test]
    fn null_vector_rejects_double_null() {
        let r = HermitianMatrix::diag(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            null_eigenvector(&r, DEFAULT_RANK_TOL),
            Err(Error::RankMismatch { found: 2 })
        ));
    }

    #[test]
    fn sherman_morrison_special_cases() {
        let r_inv = random_hpd(3, 5);
        let a = ComplexVector::new(vec![c(1.0, 0.5), c(-0.2, 0.1), c(0.3, -0.4)]);
        let out = sherman_morrison_inverse(&r_inv, &a, 0.0, 2.0).unwrap();
        assert_eq!(out, r_inv.scaled(0.5));

        let one = HermitianMatrix::identity(1);
        let out = sherman_morrison_inverse(&one, &[c(1.0, 0.0)], 1.0, 1.0).unwrap();
        assert!((out.get(0, 0) - c(0.5, 0.0)).norm() < 1e-15);

        assert!(matches!(
            sherman_morrison_inverse(&one, &[c(1.0, 0.0)], 1.0, 0.0),
            Err(Error::InvalidVariance(_))
        ));
    }

    #[test]
    fn sherman_morrison_matches_dense_inverse() {
        let r = random_hpd(4, 9);
        let r_inv = r.inverse_pd().unwrap();
        let a = lcg_matrix(4, 13).column(0);
        let (cc, d) = (2.5, 0.7);
        let direct = r.scaled(d).plus_outer(&a, cc).as_matrix().inverse().unwrap();
        let sm = sherman_morrison_inverse(&r_inv, &a, cc, d).unwrap();
        assert!(rel_frob(sm.as_matrix(), &direct) < 1e-10);
    }

    #[test]
    fn restored_inverse_cases() {
        let pinv = pseudo_inverse_psd(&HermitianMatrix::diag(&[1.0, 0.0]), DEFAULT_RANK_TOL).unwrap();
        let b = ComplexVector::basis(2, 1);
        let out = rank_one_restored_inverse(&pinv, &b, 2.0).unwrap();
        // direct inverse of diag(1, 2)
        assert!(rel_frob(out.as_matrix(), HermitianMatrix::diag(&[1.0, 0.5]).as_matrix()) < 1e-15);

        let out = rank_one_restored_inverse(&HermitianMatrix::zeros(1), &[c(1.0, 0.0)], 3.0).unwrap();
        assert!((out.get(0, 0).re - 1.0 / 3.0).abs() < 1e-15);

        assert!(matches!(
            rank_one_restored_inverse(&pinv, &b, 0.0),
            Err(Error::InvalidVariance(_))
        ));
        let wrong = ComplexVector::basis(2, 0);
        assert!(matches!(
            rank_one_restored_inverse(&pinv, &wrong, 1.0),
            Err(Error::Inconsistent(_))
        ));
    }

    #[test]
    fn restored_inverse_on_rank_deficient_4x4() {
        let g = lcg_matrix(4, 21);
        let basis = hermitian_eig(&HermitianMatrix::symmetrized(g.mul(&g.adjoint()))).vectors;
        let r_prime = HermitianMatrix::from_eigen(&[0.0, 0.5, 1.5, 3.0], &basis);
        let b = null_eigenvector(&r_prime, DEFAULT_RANK_TOL).unwrap();
        let pinv = pseudo_inverse_psd(&r_prime, DEFAULT_RANK_TOL).unwrap();
        let lambda = 0.8;
        let inv = rank_one_restored_inverse(&pinv, &b, lambda).unwrap();
        let full = r_prime.plus_outer(&b, lambda);
        let prod = inv.as_matrix().mul(full.as_matrix());
        assert!(prod.sub(&CMatrix::identity(4)).frobenius_norm() < 1e-9);
    }

    #[test]
    fn cholesky_inverse_matches_gauss_jordan() {
        for n in [1, 2, 3, 5, 8] {
            let h = random_hpd(n, n as u64);
            let chol = h.inverse_pd().unwrap();
            let gj = h.as_matrix().inverse().unwrap();
            assert!(rel_frob(chol.as_matrix(), &gj) < 1e-12, "n={n}");
        }
        assert!(HermitianMatrix::diag(&[1.0, -1.0]).inverse_pd().is_err());
    }
}
