//! Dense real and complex matrices, the matrix exponential and its Fréchet
//! derivative.
//!
//! `mat_exp` follows the scaling-and-squaring scheme with diagonal Padé
//! approximants of degree 3, 5, 7, 9 or 13, chosen from the 1-norm of the
//! argument against the backward-error thresholds θₘ of Higham (2005).

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Dense real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RealMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::arg(format!(
                "matrix storage {} does not match {rows}×{cols}",
                data.len()
            )));
        }
        Ok(RealMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::arg("ragged matrix rows"));
        }
        Self::from_vec(rows.len(), cols, rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        RealMatrix { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> RealMatrix {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scale(&self, alpha: f64) -> RealMatrix {
        RealMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| alpha * v).collect() }
    }

    pub fn matmul(&self, other: &RealMatrix) -> RealMatrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let mut out = RealMatrix::zeros(self.rows, other.cols);
        gemm_real(self.rows, self.cols, other.cols, &self.data, &other.data, &mut out.data, false);
        out
    }

    /// `(A + Aᵀ)/2`
    pub fn symmetric_part(&self) -> RealMatrix {
        Self::from_fn(self.rows, self.cols, |i, j| 0.5 * (self.get(i, j) + self.get(j, i)))
    }

    /// `(A − Aᵀ)/2`
    pub fn skew_part(&self) -> RealMatrix {
        Self::from_fn(self.rows, self.cols, |i, j| 0.5 * (self.get(i, j) - self.get(j, i)))
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_diagonal(&self) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..self.cols).all(|j| i == j || self.get(i, j) == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_complex(&self) -> ComplexMatrix {
        assert!(self.is_square(), "complex matrices are square");
        ComplexMatrix { n: self.rows, data: self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect() }
    }

    /// Positive-semidefinite `V·|D|·Vᵀ` for the eigendecomposition `V·D·Vᵀ` of
    /// the symmetric part of `self`.
    pub fn symmetric_abs(&self) -> RealMatrix {
        let s = self.symmetric_part();
        let n = s.rows;
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &s.data));
        let v = &eig.eigenvectors;
        Self::from_fn(n, n, |i, j| {
            (0..n).map(|k| v[(i, k)] * eig.eigenvalues[k].abs() * v[(j, k)]).sum()
        })
    }
}

impl Add for &RealMatrix {
    type Output = RealMatrix;
    fn add(self, rhs: &RealMatrix) -> RealMatrix {
        assert_eq!(self.shape(), rhs.shape());
        RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &RealMatrix {
    type Output = RealMatrix;
    fn sub(self, rhs: &RealMatrix) -> RealMatrix {
        assert_eq!(self.shape(), rhs.shape());
        RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// `c = a·b` (or `c += a·b` when `accumulate`) for row-major `m×k` and `k×n`.
pub(crate) fn gemm_real(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths checked above; strides describe dense row-major storage.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    n: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(n: usize) -> Self {
        ComplexMatrix { n, data: vec![ZERO; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn from_vec(n: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::arg(format!("matrix storage {} does not match {n}×{n}", data.len())));
        }
        Ok(ComplexMatrix { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        ComplexMatrix { n, data }
    }

    pub fn diag(values: &[Complex64]) -> Self {
        let n = values.len();
        Self::from_fn(n, |i, j| if i == j { values[i] } else { ZERO })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.n + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.n;
        (0..n).all(|i| (0..n).all(|j| i == j || self.data[i * n + j] == ZERO))
    }

    pub fn scale(&self, alpha: Complex64) -> ComplexMatrix {
        ComplexMatrix { n: self.n, data: self.data.iter().map(|v| alpha * v).collect() }
    }

    pub fn scale_real(&self, alpha: f64) -> ComplexMatrix {
        ComplexMatrix { n: self.n, data: self.data.iter().map(|v| v * alpha).collect() }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: Complex64, other: &ComplexMatrix) {
        assert_eq!(self.n, other.n);
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += alpha * b);
    }

    pub fn conj(&self) -> ComplexMatrix {
        ComplexMatrix { n: self.n, data: self.data.iter().map(|v| v.conj()).collect() }
    }

    pub fn transpose(&self) -> ComplexMatrix {
        Self::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn conj_transpose(&self) -> ComplexMatrix {
        Self::from_fn(self.n, |i, j| self.get(j, i).conj())
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self.get(i, j).norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Relative Frobenius distance to `reference`.
    pub fn rel_error(&self, reference: &ComplexMatrix) -> f64 {
        let d = (self - reference).frobenius();
        let r = reference.frobenius();
        if r > 0.0 { d / r } else { d }
    }

    /// Frobenius inner product `⟨self, other⟩ = tr(selfᴴ·other)`.
    pub fn inner(&self, other: &ComplexMatrix) -> Complex64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.n, other.n, "matmul dimension mismatch");
        let n = self.n;
        let mut out = ComplexMatrix::zeros(n);
        if n >= 24 {
            // SAFETY: Complex64 is repr(C) {re, im}, layout-identical to [f64; 2];
            // all three buffers hold n×n dense row-major entries.
            unsafe {
                matrixmultiply::zgemm(
                    matrixmultiply::CGemmOption::Standard,
                    matrixmultiply::CGemmOption::Standard,
                    n, n, n,
                    [1.0, 0.0],
                    self.data.as_ptr() as *const [f64; 2], n as isize, 1,
                    other.data.as_ptr() as *const [f64; 2], n as isize, 1,
                    [0.0, 0.0],
                    out.data.as_mut_ptr() as *mut [f64; 2], n as isize, 1,
                );
            }
        } else {
            for i in 0..n {
                let row = &mut out.data[i * n..(i + 1) * n];
                for k in 0..n {
                    let a = self.data[i * n + k];
                    if a == ZERO {
                        continue;
                    }
                    let brow = &other.data[k * n..(k + 1) * n];
                    row.iter_mut().zip(brow).for_each(|(c, b)| *c += a * b);
                }
            }
        }
        out
    }

    /// `y = self · x`
    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        let n = self.n;
        assert!(x.len() == n && y.len() == n);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.data[i * n..(i + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// `y = selfᴴ · x`
    pub fn matvec_adjoint(&self, x: &[Complex64], y: &mut [Complex64]) {
        let n = self.n;
        assert!(x.len() == n && y.len() == n);
        y.iter_mut().for_each(|v| *v = ZERO);
        for (i, xi) in x.iter().enumerate() {
            for (yj, a) in y.iter_mut().zip(&self.data[i * n..(i + 1) * n]) {
                *yj += a.conj() * xi;
            }
        }
    }

    /// Solves `self · X = rhs` by LU factorization with partial pivoting.
    pub fn solve(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        let n = self.n;
        assert_eq!(n, rhs.n);
        let mut a = self.data.clone();
        let mut b = rhs.data.clone();
        for col in 0..n {
            let (piv, pmag) = (col..n)
                .map(|r| (r, a[r * n + col].norm()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmag == 0.0 || !pmag.is_finite() {
                return Err(Error::numeric("singular matrix in linear solve"));
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                    b.swap(col * n + j, piv * n + j);
                }
            }
            let inv = ONE / a[col * n + col];
            for r in (col + 1)..n {
                let f = a[r * n + col] * inv;
                if f == ZERO {
                    continue;
                }
                a[r * n + col] = ZERO;
                let (top, bottom) = a.split_at_mut(r * n);
                let prow = &top[col * n + col + 1..col * n + n];
                bottom[col + 1..n].iter_mut().zip(prow).for_each(|(x, p)| *x -= f * p);
                let (btop, bbot) = b.split_at_mut(r * n);
                let brow = &btop[col * n..col * n + n];
                bbot[..n].iter_mut().zip(brow).for_each(|(x, p)| *x -= f * p);
            }
        }
        for col in (0..n).rev() {
            let inv = ONE / a[col * n + col];
            for j in 0..n {
                b[col * n + j] *= inv;
            }
            for r in 0..col {
                let f = a[r * n + col];
                if f == ZERO {
                    continue;
                }
                let (top, bottom) = b.split_at_mut(col * n);
                let src = &bottom[..n];
                top[r * n..r * n + n].iter_mut().zip(src).for_each(|(x, p)| *x -= f * p);
            }
        }
        Ok(ComplexMatrix { n, data: b })
    }

    /// Largest singular value, via the largest eigenvalue of `selfᴴ·self`.
    pub fn spectral_norm(&self) -> f64 {
        let g = self.conj_transpose().matmul(self);
        let n = self.n;
        let h = DMatrix::from_fn(n, n, |i, j| g.get(i, j));
        let eig = SymmetricEigen::new(h);
        eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v)).max(0.0).sqrt()
    }

    fn add_identity_scaled(&mut self, alpha: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += alpha;
        }
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.n, rhs.n);
        ComplexMatrix { n: self.n, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.n, rhs.n);
        ComplexMatrix { n: self.n, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE_9: [f64; 10] = [
    17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0, 2162160.0, 110880.0,
    3960.0, 90.0, 1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
    129060195264000.0, 10559470521600.0, 670442572800.0, 33522128640.0, 1323241920.0,
    40840800.0, 960960.0, 16380.0, 182.0, 1.0,
];

/// Padé approximant of degree 3..9: `U = A·Σ b_{2j+1} A^{2j}`, `V = Σ b_{2j} A^{2j}`.
fn pade_low(a: &ComplexMatrix, b: &[f64]) -> Result<ComplexMatrix> {
    let n = a.dim();
    let a2 = a.matmul(a);
    let mut powers = vec![ComplexMatrix::identity(n), a2.clone()];
    while 2 * powers.len() < b.len() {
        let next = powers.last().unwrap().matmul(&a2);
        powers.push(next);
    }
    let mut u_inner = ComplexMatrix::zeros(n);
    let mut v = ComplexMatrix::zeros(n);
    for (j, p) in powers.iter().enumerate() {
        u_inner.axpy(Complex64::new(b[2 * j + 1], 0.0), p);
        v.axpy(Complex64::new(b[2 * j], 0.0), p);
    }
    let u = a.matmul(&u_inner);
    (&v - &u).solve(&(&v + &u))
}

fn pade_13(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    let b = &PADE_13;
    let c = |x: f64| Complex64::new(x, 0.0);
    let a2 = a.matmul(a);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);

    let mut w1 = a6.scale_real(b[13]);
    w1.axpy(c(b[11]), &a4);
    w1.axpy(c(b[9]), &a2);
    let mut u_inner = a6.matmul(&w1);
    u_inner.axpy(c(b[7]), &a6);
    u_inner.axpy(c(b[5]), &a4);
    u_inner.axpy(c(b[3]), &a2);
    u_inner.add_identity_scaled(b[1]);
    let u = a.matmul(&u_inner);

    let mut z1 = a6.scale_real(b[12]);
    z1.axpy(c(b[10]), &a4);
    z1.axpy(c(b[8]), &a2);
    let mut v = a6.matmul(&z1);
    v.axpy(c(b[6]), &a6);
    v.axpy(c(b[4]), &a4);
    v.axpy(c(b[2]), &a2);
    v.add_identity_scaled(b[0]);

    (&v - &u).solve(&(&v + &u))
}

/// Matrix exponential by scaling and squaring with a Padé approximant.
pub fn mat_exp(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    if !m.is_finite() {
        return Err(Error::numeric("mat_exp argument is not finite"));
    }
    let n = m.dim();
    if n == 1 || m.is_diagonal() {
        let out = ComplexMatrix::diag(&(0..n).map(|i| m.get(i, i).exp()).collect::<Vec<_>>());
        return check_finite(out, m);
    }

    let norm = m.norm1();
    let out = if norm <= THETA_3 {
        pade_low(m, &PADE_3)?
    } else if norm <= THETA_5 {
        pade_low(m, &PADE_5)?
    } else if norm <= THETA_7 {
        pade_low(m, &PADE_7)?
    } else if norm <= THETA_9 {
        pade_low(m, &PADE_9)?
    } else {
        let s = (norm / THETA_13).log2().ceil().max(0.0) as i32;
        if s > 1000 {
            return Err(Error::numeric(format!("mat_exp argument norm {norm:e} is too large")));
        }
        let mut r = pade_13(&m.scale_real(0.5f64.powi(s)))?;
        for _ in 0..s {
            r = r.matmul(&r);
            if !r.is_finite() {
                break;
            }
        }
        r
    };
    check_finite(out, m)
}

fn check_finite(out: ComplexMatrix, arg: &ComplexMatrix) -> Result<ComplexMatrix> {
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::numeric(format!(
            "matrix exponential overflowed (argument 1-norm {:e})",
            arg.norm1()
        )))
    }
}

/// Returns `(exp(M), L(M, E))` where `L` is the Fréchet derivative of the
/// exponential at `M` in direction `E`, read off the upper-right block of
/// `exp([[M, E], [0, M]])`.
pub fn mat_exp_frechet(m: &ComplexMatrix, e: &ComplexMatrix) -> Result<(ComplexMatrix, ComplexMatrix)> {
    if m.dim() != e.dim() {
        return Err(Error::arg(format!("frechet shapes differ: {} vs {}", m.dim(), e.dim())));
    }
    if !e.is_finite() {
        return Err(Error::numeric("frechet direction is not finite"));
    }
    let expm = mat_exp(m)?;
    let n = m.dim();
    let e_norm = e.norm1();
    if e_norm == 0.0 {
        return Ok((expm, ComplexMatrix::zeros(n)));
    }
    // L is linear in E; rescale E so that it does not inflate the block norm.
    let factor = e_norm / m.norm1().max(1.0);
    let e_scaled = e.scale_real(1.0 / factor);
    let block = ComplexMatrix::from_fn(2 * n, |i, j| match (i < n, j < n) {
        (true, true) => m.get(i, j),
        (true, false) => e_scaled.get(i, j - n),
        (false, true) => ZERO,
        (false, false) => m.get(i - n, j - n),
    });
    let eb = mat_exp(&block)?;
    let l = ComplexMatrix::from_fn(n, |i, j| eb.get(i, j + n) * factor);
    Ok((expm, l))
}

/// Largest real part over the eigenvalues of `m`.
pub fn spectral_abscissa(m: &ComplexMatrix) -> f64 {
    let n = m.dim();
    if n == 1 {
        return m.get(0, 0).re;
    }
    let a = DMatrix::from_fn(n, n, |i, j| m.get(i, j));
    let eig = a
        .clone()
        .eigenvalues()
        .expect("complex Schur form always yields eigenvalues");
    eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::taylor_exp;
    use crate::rng::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_complex(n: usize, scale: f64, rng: &mut Rng) -> ComplexMatrix {
        ComplexMatrix::from_fn(n, |_, _| c(rng.normal(), rng.normal()) * scale)
    }

    fn with_norm(m: ComplexMatrix, target: f64) -> ComplexMatrix {
        let f = target / m.norm1();
        m.scale_real(f)
    }

    #[test]
    fn exp_of_zero_is_identity() {
        for n in [1, 2, 5] {
            assert_eq!(mat_exp(&ComplexMatrix::zeros(n)).unwrap(), ComplexMatrix::identity(n));
        }
    }

    #[test]
    fn exp_of_diagonal() {
        let e = mat_exp(&ComplexMatrix::diag(&[c(1.0, 0.0), c(-2.0, 0.0)])).unwrap();
        assert!((e.get(0, 0).re - 2.718281828459045).abs() < 1e-15);
        assert!((e.get(1, 1).re - 0.1353352832366127).abs() < 1e-15);
        assert_eq!(e.get(0, 1), ZERO);
    }

    #[test]
    fn exp_of_nilpotent() {
        let m = ComplexMatrix::from_vec(2, vec![ZERO, ONE, ZERO, ZERO]).unwrap();
        let e = mat_exp(&m).unwrap();
        let expect = ComplexMatrix::from_vec(2, vec![ONE, ONE, ZERO, ONE]).unwrap();
        assert!(e.rel_error(&expect) < 1e-15);
    }

    #[test]
    fn exp_matches_taylor_oracle_across_pade_degrees() {
        let mut rng = Rng::new(7);
        for target in [0.01, 0.2, 0.9, 2.0, 3.0, 8.0, 20.0] {
            let m = with_norm(random_complex(4, 1.0, &mut rng), target);
            let e = mat_exp(&m).unwrap();
            let t = taylor_exp(&m);
            assert!(e.rel_error(&t) < 1e-12, "norm {target}: {}", e.rel_error(&t));
        }
    }

    #[test]
    fn inverse_and_semigroup() {
        let mut rng = Rng::new(8);
        for _ in 0..5 {
            let m = with_norm(random_complex(5, 1.0, &mut rng), 5.0);
            let p = mat_exp(&m).unwrap().matmul(&mat_exp(&m.scale_real(-1.0)).unwrap());
            assert!((&p - &ComplexMatrix::identity(5)).max_abs() < 1e-10);
            let half = mat_exp(&m.scale_real(0.5)).unwrap();
            let full = mat_exp(&m).unwrap();
            assert!(half.matmul(&half).rel_error(&full) < 1e-10);
        }
    }

    #[test]
    fn normal_stable_matrix_is_contractive() {
        // Normal matrix: unitary conjugation of a diagonal with non-positive real parts.
        let mut rng = Rng::new(9);
        let h = random_complex(4, 1.0, &mut rng);
        let herm = &h + &h.conj_transpose();
        let u = mat_exp(&herm.scale(c(0.0, 1.0))).unwrap();
        let d = ComplexMatrix::diag(&[c(-0.5, 3.0), c(0.0, -1.0), c(-2.0, 0.5), c(-0.1, 0.0)]);
        let m = u.matmul(&d).matmul(&u.conj_transpose());
        assert!(spectral_abscissa(&m) <= 1e-12);
        assert!(mat_exp(&m).unwrap().spectral_norm() <= 1.0 + 1e-10);
    }

    #[test]
    fn overflow_is_reported() {
        let m = ComplexMatrix::from_vec(2, vec![c(800.0, 0.0), ONE, ZERO, c(1.0, 0.0)]).unwrap();
        assert!(matches!(mat_exp(&m), Err(Error::Numeric(_))));
    }

    #[test]
    fn scalar_path_agrees_with_matrix_path() {
        // [[z, 1], [0, 0]] is not diagonal, so it takes the Padé path, and its
        // (0,0) entry is exactly e^z.
        for z in [c(-1.0, 2.0), c(0.3, -0.7), c(-4.0, 10.0), c(0.01, 0.0)] {
            let scalar = mat_exp(&ComplexMatrix::diag(&[z])).unwrap().get(0, 0);
            let m = ComplexMatrix::from_vec(2, vec![z, ONE, ZERO, ZERO]).unwrap();
            let general = mat_exp(&m).unwrap().get(0, 0);
            assert!((general - scalar).norm() / scalar.norm() < 1e-14, "{z}");
        }
    }

    #[test]
    fn frechet_at_zero_is_identity_map() {
        let mut rng = Rng::new(10);
        let e = random_complex(3, 1.0, &mut rng);
        let (expm, l) = mat_exp_frechet(&ComplexMatrix::zeros(3), &e).unwrap();
        assert_eq!(expm, ComplexMatrix::identity(3));
        assert!(l.rel_error(&e) < 1e-14);
    }

    #[test]
    fn frechet_commuting_diagonal() {
        let m = ComplexMatrix::diag(&[c(0.5, 0.0), c(-1.0, 0.3), c(2.0, -1.0)]);
        let e = ComplexMatrix::diag(&[c(1.0, 1.0), c(-0.5, 0.0), c(0.2, 0.7)]);
        let (expm, l) = mat_exp_frechet(&m, &e).unwrap();
        let expect = e.matmul(&expm);
        assert!(l.rel_error(&expect) < 1e-13);
    }

    #[test]
    fn frechet_matches_central_difference() {
        let mut rng = Rng::new(11);
        for _ in 0..5 {
            let m = random_complex(3, 0.7, &mut rng);
            let e = random_complex(3, 1.0, &mut rng);
            let (expm, l) = mat_exp_frechet(&m, &e).unwrap();
            assert_eq!(expm, mat_exp(&m).unwrap());
            let h = 1e-6;
            let mut p = m.clone();
            p.axpy(c(h, 0.0), &e);
            let mut q = m.clone();
            q.axpy(c(-h, 0.0), &e);
            let fd = (&mat_exp(&p).unwrap() - &mat_exp(&q).unwrap()).scale_real(0.5 / h);
            assert!(l.rel_error(&fd) < 1e-6, "{}", l.rel_error(&fd));
        }
    }

    #[test]
    fn abscissa_examples() {
        assert_eq!(spectral_abscissa(&ComplexMatrix::diag(&[c(-1.0, 0.0), c(-3.0, 0.0)])), -1.0);
        let rot = ComplexMatrix::from_vec(2, vec![ZERO, ONE, -ONE, ZERO]).unwrap();
        assert!(spectral_abscissa(&rot).abs() < 1e-12);
    }

    #[test]
    fn abscissa_of_negative_gram_matches_hermitian_oracle() {
        let mut rng = Rng::new(12);
        for n in [2, 3, 6, 10] {
            let g = random_complex(n, 1.0, &mut rng);
            let m = g.matmul(&g.conj_transpose()).scale_real(-1.0);
            let expect = crate::oracle::hermitian_eigenvalues(&m).into_iter().fold(f64::NEG_INFINITY, f64::max);
            let got = spectral_abscissa(&m);
            assert!(got <= 0.0 + 1e-12);
            assert!((got - expect).abs() < 1e-8 * (1.0 + expect.abs()), "{got} vs {expect}");
        }
    }

    #[test]
    fn solve_recovers_rhs() {
        let mut rng = Rng::new(13);
        for n in [3, 30] {
            let a = random_complex(n, 1.0, &mut rng);
            let x = random_complex(n, 1.0, &mut rng);
            let b = a.matmul(&x);
            assert!(a.solve(&b).unwrap().rel_error(&x) < 1e-10);
        }
    }

    #[test]
    fn gemm_path_matches_naive_path() {
        let mut rng = Rng::new(14);
        let a = random_complex(30, 1.0, &mut rng);
        let b = random_complex(30, 1.0, &mut rng);
        let fast = a.matmul(&b);
        let slow = ComplexMatrix::from_fn(30, |i, j| (0..30).map(|k| a.get(i, k) * b.get(k, j)).sum());
        assert!(fast.rel_error(&slow) < 1e-14);
    }

    #[test]
    fn symmetric_abs_is_psd_and_matches_on_psd_input() {
        let mut rng = Rng::new(15);
        let r = RealMatrix::from_fn(4, 4, |_, _| rng.normal());
        let a = r.symmetric_abs();
        assert!(crate::oracle::hermitian_eigenvalues(&a.to_complex()).iter().all(|&v| v >= -1e-12));
        let psd = r.matmul(&r.transpose());
        assert!((&psd.symmetric_abs() - &psd).max_abs() < 1e-12);
    }
}
