//! Small dense complex matrices.
//!
//! Everything in this crate lives in dimensions up to 16 (the 4-level ion,
//! 9×9 Choi matrices, 12×12 system–pointer products), so matrices are plain
//! row-major `Vec<Complex64>` with explicit dimensions and the Hermitian
//! eigensolver is a cyclic complex Jacobi iteration.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Default tolerance of [`ComplexMatrix::is_hermitian`].
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Hermiticity tolerance accepted by [`herm_eig`].
pub const EIG_HERMITIAN_TOL: f64 = 1e-10;
/// Most negative eigenvalue [`psd_sqrt`] clips to zero.
pub const PSD_TOL: f64 = 1e-9;

const JACOBI_OFF_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!("{} entries for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { C64::new(diag[i], 0.0) } else { ZERO })
    }

    /// `|u⟩⟨v|`
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j].conj())
    }

    /// `|ψ⟩⟨ψ|`
    pub fn projector(psi: &[C64]) -> Self {
        Self::outer(psi, psi)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| self.data[i * self.cols..(i + 1) * self.cols].iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `⟨u|M|v⟩`
    pub fn sandwich(&self, u: &[C64], v: &[C64]) -> C64 {
        let mv = self.matvec(v);
        u.iter().zip(&mv).map(|(a, b)| a.conj() * b).sum()
    }

    /// Kronecker product `self ⊗ other`; the first factor carries the slow index.
    pub fn kron(&self, other: &Self) -> Self {
        let (r, c) = (other.rows, other.cols);
        Self::from_fn(self.rows * r, self.cols * c, |i, j| self[(i / r, j / c)] * other[(i % r, j % c)])
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Max-norm distance. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && self.hermiticity_defect() <= tol
    }

    fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in i..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// `(M + M†)/2`
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5)
    }

    /// Partial trace of a `dim_a·dim_b` square matrix over one factor.
    pub fn partial_trace(&self, dim_a: usize, dim_b: usize, traced: Subsystem) -> Result<Self> {
        if !self.is_square() || self.rows != dim_a * dim_b {
            return Err(Error::DimensionMismatch(format!(
                "partial trace of a {}x{} matrix over {dim_a}x{dim_b}",
                self.rows, self.cols
            )));
        }
        let out = match traced {
            Subsystem::A => {
                Self::from_fn(dim_b, dim_b, |a, b| (0..dim_a).map(|s| self[(s * dim_b + a, s * dim_b + b)]).sum())
            }
            Subsystem::B => {
                Self::from_fn(dim_a, dim_a, |a, b| (0..dim_b).map(|s| self[(a * dim_b + s, b * dim_b + s)]).sum())
            }
        };
        Ok(out)
    }

    pub fn to_json(&self) -> MatrixJson {
        MatrixJson {
            rows: self.rows,
            cols: self.cols,
            re: self.data.iter().map(|z| z.re).collect(),
            im: self.data.iter().map(|z| z.im).collect(),
        }
    }

    pub fn from_json(json: &MatrixJson) -> Result<Self> {
        if json.re.len() != json.im.len() {
            return Err(Error::DimensionMismatch("re and im arrays differ in length".into()));
        }
        let data = json.re.iter().zip(&json.im).map(|(&re, &im)| C64::new(re, im)).collect();
        Self::from_vec(json.rows, json.cols, data)
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;

    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        let mut out = ComplexMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "shape mismatch");
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "shape mismatch");
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Which tensor factor a partial trace removes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsystem {
    A,
    B,
}

/// Row-major matrix export, `{"rows":n,"cols":m,"re":[...],"im":[...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// Eigendecomposition `M = V diag(λ) V†` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermEig {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector of `values[k]`.
    pub vectors: ComplexMatrix,
}

impl HermEig {
    /// `V f(Λ) V†`
    pub fn map(&self, f: impl Fn(f64) -> C64) -> ComplexMatrix {
        let n = self.values.len();
        let fv: Vec<C64> = self.values.iter().map(|&l| f(l)).collect();
        ComplexMatrix::from_fn(n, n, |i, j| {
            (0..n).map(|k| self.vectors[(i, k)] * fv[k] * self.vectors[(j, k)].conj()).sum()
        })
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.map(|l| C64::new(l, 0.0))
    }
}

/// Hermitian eigendecomposition by cyclic complex Jacobi rotations.
pub fn herm_eig(m: &ComplexMatrix) -> Result<HermEig> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!("eigendecomposition of a {}x{} matrix", m.rows, m.cols)));
    }
    let scale = m.max_abs().max(1.0);
    let defect = m.hermiticity_defect();
    if defect > EIG_HERMITIAN_TOL * scale {
        return Err(Error::NonHermitianInput(defect));
    }
    let n = m.rows;
    let mut a = m.hermitian_part();
    let mut v = ComplexMatrix::identity(n);
    let norm = a.frobenius_norm();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_OFF_TOL * norm || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                jacobi_rotate(&mut a, &mut v, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(x, x)].re.total_cmp(&a[(y, y)].re));
    let values = order.iter().map(|&k| a[(k, k)].re).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok(HermEig { values, vectors })
}

/// Zero `a[(p, q)]` with `a ← R† a R`, `v ← v R`.
fn jacobi_rotate(a: &mut ComplexMatrix, v: &mut ComplexMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let mag = apq.norm();
    if mag == 0.0 {
        return;
    }
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    let phase = apq / mag;
    let tau = (aqq - app) / (2.0 * mag);
    let t = if tau >= 0.0 { 1.0 / (tau + (1.0 + tau * tau).sqrt()) } else { -1.0 / (-tau + (1.0 + tau * tau).sqrt()) };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    // R = D(phase) · J(c, s) restricted to (p, q).
    let r_pp = C64::new(c, 0.0);
    let r_pq = C64::new(s, 0.0);
    let r_qp = -phase.conj() * s;
    let r_qq = phase.conj() * c;

    let n = a.rows;
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * r_pp + akq * r_qp;
        a[(k, q)] = akp * r_pq + akq * r_qq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = r_pp.conj() * apk + r_qp.conj() * aqk;
        a[(q, k)] = r_pq.conj() * apk + r_qq.conj() * aqk;
    }
    a[(p, q)] = ZERO;
    a[(q, p)] = ZERO;
    a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = C64::new(a[(q, q)].re, 0.0);

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * r_pp + vkq * r_qp;
        v[(k, q)] = vkp * r_pq + vkq * r_qq;
    }
}

/// Principal square root of a positive semidefinite matrix. Eigenvalues in
/// `[-PSD_TOL, 0)` are treated as zero.
pub fn psd_sqrt(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = herm_eig(m)?;
    check_psd(&eig)?;
    Ok(eig.map(|l| C64::new(l.max(0.0).sqrt(), 0.0)))
}

pub(crate) fn check_psd(eig: &HermEig) -> Result<()> {
    match eig.values.first() {
        Some(&min) if min < -PSD_TOL => Err(Error::NotPsd(min)),
        _ => Ok(()),
    }
}

/// `exp(-i H t)` for Hermitian `H`.
pub fn unitary_propagator(h: &ComplexMatrix, t: f64) -> Result<ComplexMatrix> {
    let eig = herm_eig(h)?;
    Ok(eig.map(|l| C64::from_polar(1.0, -l * t)))
}

pub fn kron_vec(u: &[C64], v: &[C64]) -> Vec<C64> {
    u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect()
}

pub fn inner(u: &[C64], v: &[C64]) -> C64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, rng: &mut impl Rng) -> ComplexMatrix {
        ComplexMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn random_hermitian(n: usize, rng: &mut impl Rng) -> ComplexMatrix {
        random_matrix(n, rng).hermitian_part()
    }

    /// Coefficients of det(xI - M) via Faddeev–LeVerrier, highest power first.
    fn char_poly(m: &ComplexMatrix) -> Vec<f64> {
        let n = m.rows();
        let mut coeffs = vec![ONE];
        let mut mk = ComplexMatrix::zeros(n, n);
        for k in 1..=n {
            let prev = coeffs[k - 1];
            let shifted = &mk + &ComplexMatrix::identity(n).scale(prev);
            mk = m * &shifted;
            coeffs.push(-mk.trace() / k as f64);
        }
        coeffs.iter().map(|c| c.re).collect()
    }

    fn poly_eval(c: &[f64], x: f64) -> f64 {
        c.iter().fold(0.0, |acc, &a| acc * x + a)
    }

    fn bisection_roots(c: &[f64], lo: f64, hi: f64) -> Vec<f64> {
        let grid = 200_000;
        let mut roots = Vec::new();
        let step = (hi - lo) / grid as f64;
        for k in 0..grid {
            let (mut a, mut b) = (lo + k as f64 * step, lo + (k + 1) as f64 * step);
            let (fa, fb) = (poly_eval(c, a), poly_eval(c, b));
            if fa == 0.0 {
                roots.push(a);
                continue;
            }
            if fa * fb > 0.0 {
                continue;
            }
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if poly_eval(c, a) * poly_eval(c, mid) <= 0.0 {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            roots.push(0.5 * (a + b));
        }
        roots
    }

    #[test]
    fn identity_eigenvalues() {
        let eig = herm_eig(&ComplexMatrix::identity(3)).unwrap();
        assert_eq!(eig.values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_eigenvectors_are_a_permutation() {
        let m = ComplexMatrix::from_real_diag(&[3.0, 1.0, 2.0]);
        let eig = herm_eig(&m).unwrap();
        assert_eq!(eig.values, vec![1.0, 2.0, 3.0]);
        for j in 0..3 {
            let col = eig.vectors.column(j);
            let ones = col.iter().filter(|z| (z.norm() - 1.0).abs() < 1e-15).count();
            let zeros = col.iter().filter(|z| z.norm() < 1e-15).count();
            assert_eq!((ones, zeros), (1, 2));
        }
    }

    #[test]
    fn eigenvalues_match_characteristic_polynomial_bisection() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = random_hermitian(4, &mut rng);
        let bound = m.frobenius_norm() + 1.0;
        let oracle = bisection_roots(&char_poly(&m), -bound, bound);
        assert_eq!(oracle.len(), 4);
        let eig = herm_eig(&m).unwrap();
        for (a, b) in eig.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = ComplexMatrix::identity(2);
        m[(0, 1)] = C64::new(1.0, 0.0);
        assert!(matches!(herm_eig(&m), Err(Error::NonHermitianInput(_))));
    }

    #[test]
    fn reconstruction_and_unitarity_dims_2_to_16() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 2..=16 {
            for _ in 0..100 {
                let m = random_hermitian(n, &mut rng);
                let eig = herm_eig(&m).unwrap();
                assert!(eig.reconstruct().max_abs_diff(&m) <= 1e-9);
                let vv = &eig.vectors.adjoint() * &eig.vectors;
                assert!(vv.max_abs_diff(&ComplexMatrix::identity(n)) <= 1e-9);
                assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }

    #[test]
    fn degenerate_spectrum() {
        // Rank-2 projector plus a rotated copy: repeated eigenvalues.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = unitary_propagator(&random_hermitian(5, &mut rng), 1.0).unwrap();
        let d = ComplexMatrix::from_real_diag(&[0.0, 0.0, 1.0, 1.0, 1.0]);
        let m = &(&u * &d) * &u.adjoint();
        let eig = herm_eig(&m).unwrap();
        assert!(eig.reconstruct().max_abs_diff(&m) < 1e-12);
        assert!((eig.values[0]).abs() < 1e-13 && (eig.values[4] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn sqrt_identity_and_diagonal() {
        let id = ComplexMatrix::identity(3);
        assert!(psd_sqrt(&id).unwrap().max_abs_diff(&id) < 1e-15);
        let d = psd_sqrt(&ComplexMatrix::from_real_diag(&[4.0, 9.0, 0.0])).unwrap();
        assert!(d.max_abs_diff(&ComplexMatrix::from_real_diag(&[2.0, 3.0, 0.0])) < 1e-15);
    }

    #[test]
    fn sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = random_matrix(6, &mut rng);
        let m = &b.adjoint() * &b;
        let r = psd_sqrt(&m).unwrap();
        assert!((&r * &r).max_abs_diff(&m) <= 1e-8);
        assert!(r.is_hermitian(1e-12));
    }

    #[test]
    fn sqrt_clips_tiny_negative_and_rejects_large() {
        let tiny = ComplexMatrix::from_real_diag(&[1.0, -1e-11]);
        assert_eq!(psd_sqrt(&tiny).unwrap()[(1, 1)], ZERO);
        let neg = ComplexMatrix::from_real_diag(&[1.0, -1e-3]);
        assert!(matches!(psd_sqrt(&neg), Err(Error::NotPsd(_))));
    }

    #[test]
    fn partial_trace_of_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(3, &mut rng);
        let b = random_matrix(2, &mut rng);
        let y = &b.adjoint() * &b;
        let y = y.scale(ONE / y.trace());
        let xy = x.kron(&y);
        let tr_b = xy.partial_trace(3, 2, Subsystem::B).unwrap();
        assert!(tr_b.max_abs_diff(&x) < 1e-14);
    }

    #[test]
    fn partial_trace_of_identity() {
        let out = ComplexMatrix::identity(9).partial_trace(3, 3, Subsystem::A).unwrap();
        assert!(out.max_abs_diff(&ComplexMatrix::identity(3).scale_real(3.0)) == 0.0);
    }

    #[test]
    fn partial_trace_dimension_mismatch() {
        let m = ComplexMatrix::identity(8);
        assert!(matches!(m.partial_trace(3, 3, Subsystem::A), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_matrix(3, &mut rng);
        let text = serde_json::to_string(&m.to_json()).unwrap();
        let back: MatrixJson = serde_json::from_str(&text).unwrap();
        assert_eq!(ComplexMatrix::from_json(&back).unwrap(), m);
        assert!(text.starts_with("{\"rows\":3,\"cols\":3,\"re\":["));
    }
}
