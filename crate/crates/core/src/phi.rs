//! Scalar and small dense evaluation of the φ-function family.
//!
//! φ_0(z) = e^z and φ_{k+1}(z) = (φ_k(z) - 1/k!) / z, with φ_k(0) = 1/k!.
//! Everything in this module works on small, fully materialized matrices
//! (Hessenberg matrices from Arnoldi, random test matrices). Large operators
//! go through [`crate::krylov`].

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::DMatrix;
use thiserror::Error;

/// Largest φ index accepted by the scalar and dense routines.
pub const MAX_PHI_INDEX: u32 = 8;

/// Below this magnitude `phi_scalar` sums the Taylor series directly.
const SERIES_SWITCH: f64 = 0.5;
const SERIES_TERMS: usize = 25;

/// θ_13 from Higham (2005): largest 1-norm for which the [13/13] Padé
/// approximant is accurate to unit roundoff without scaling.
const THETA_13: f64 = 5.371_920_351_148_152;

const PADE_13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Scaling threshold and Taylor degree for [`phi_dense_family`].
const FAMILY_THETA: f64 = 0.5;
const FAMILY_TAYLOR_DEGREE: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhiError {
    #[error("phi argument is not finite: {0}")]
    NonFiniteArgument(f64),
    #[error("phi index {0} exceeds the supported maximum {MAX_PHI_INDEX}")]
    IndexTooLarge(u32),
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFiniteEntries,
    #[error("matrix exponential evaluation failed (1-norm {norm:e})")]
    EvaluationFailed { norm: f64 },
}

/// Small dense real matrix.
///
/// Backed by `nalgebra` storage; constructors and accessors use row-major
/// conventions.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix(DMatrix<f64>);

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    /// Builds a matrix from entries listed row by row.
    ///
    /// Panics if `entries.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Self {
        assert_eq!(
            entries.len(),
            rows * cols,
            "row-major data has {} entries, expected {}",
            entries.len(),
            rows * cols
        );
        Self(DMatrix::from_row_slice(rows, cols, entries))
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self(DMatrix::from_fn(rows, cols, f))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 })
    }

    pub fn from_nalgebra(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn as_nalgebra(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_nalgebra(self) -> DMatrix<f64> {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.0.column(j).iter().copied().collect()
    }

    pub fn scaled(&self, r: f64) -> Self {
        Self(&self.0 * r)
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols(), "vector length does not match columns");
        let mut out = vec![0.0; self.rows()];
        for (j, &vj) in v.iter().enumerate() {
            if vj == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.0.column(j).iter()) {
                *o += a * vj;
            }
        }
        out
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        self.0
            .column_iter()
            .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Solves `self * X = rhs` by LU with partial pivoting.
    pub fn solve(&self, rhs: &DenseMatrix) -> Option<DenseMatrix> {
        self.0.clone().lu().solve(&rhs.0).map(Self)
    }

    pub fn inverse(&self) -> Option<DenseMatrix> {
        self.0.clone().try_inverse().map(Self)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, idx: (usize, usize)) -> &mut f64 {
        &mut self.0[idx]
    }
}

impl Mul for &DenseMatrix {
    type Output = DenseMatrix;
    fn mul(self, rhs: &DenseMatrix) -> DenseMatrix {
        DenseMatrix(&self.0 * &rhs.0)
    }
}

impl Add for &DenseMatrix {
    type Output = DenseMatrix;
    fn add(self, rhs: &DenseMatrix) -> DenseMatrix {
        DenseMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &DenseMatrix {
    type Output = DenseMatrix;
    fn sub(self, rhs: &DenseMatrix) -> DenseMatrix {
        DenseMatrix(&self.0 - &rhs.0)
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * f64::from(i))
}

fn check_square(a: &DenseMatrix) -> Result<(), PhiError> {
    if !a.is_square() {
        return Err(PhiError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if !a.is_finite() {
        return Err(PhiError::NonFiniteEntries);
    }
    Ok(())
}

/// φ_k(z) for a real scalar.
///
/// Uses the Taylor series for |z| < 0.5 and the augmented-matrix exponential
/// otherwise (plain `exp` for k = 0).
pub fn phi_scalar(k: u32, z: f64) -> Result<f64, PhiError> {
    if k > MAX_PHI_INDEX {
        return Err(PhiError::IndexTooLarge(k));
    }
    if !z.is_finite() {
        return Err(PhiError::NonFiniteArgument(z));
    }
    if z.abs() < SERIES_SWITCH {
        return Ok(phi_series(k, z, SERIES_TERMS));
    }
    if k == 0 {
        return Ok(z.exp());
    }
    let a = DenseMatrix::from_row_major(1, 1, &[z]);
    let cols = phi_dense_times_e1(k as usize, &a)?;
    Ok(cols[k as usize - 1][0])
}

/// Truncated series Σ_{i<terms} z^i / (k+i)!, evaluated by Horner's rule.
fn phi_series(k: u32, z: f64, terms: usize) -> f64 {
    let mut acc = 0.0;
    for i in (0..terms as u32).rev() {
        acc = acc * z / f64::from(k + i + 1) + 1.0;
    }
    acc / factorial(k)
}

/// Matrix exponential by scaling and squaring with the [13/13] Padé
/// approximant.
pub fn expm_dense(a: &DenseMatrix) -> Result<DenseMatrix, PhiError> {
    check_square(a)?;
    let n = a.rows();
    if n == 0 {
        return Ok(DenseMatrix::zeros(0, 0));
    }
    let norm = a.norm_one();
    let squarings = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    if squarings > 1000 {
        return Err(PhiError::EvaluationFailed { norm });
    }
    let scaled = a.scaled(0.5_f64.powi(squarings));

    let a = &scaled.0;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE_13;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or(PhiError::EvaluationFailed { norm })?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    let r = DenseMatrix(r);
    if !r.is_finite() {
        return Err(PhiError::EvaluationFailed { norm });
    }
    Ok(r)
}

/// Columns φ_k(A)·e_1 for k = 1..=p.
///
/// Exponentiates the bordered matrix `[[A, e_1 0…], [0, J_p]]`, where `J_p`
/// is the p×p upper shift; the last p columns of the top block row are the
/// requested vectors.
pub fn phi_dense_times_e1(p: usize, a: &DenseMatrix) -> Result<Vec<Vec<f64>>, PhiError> {
    check_square(a)?;
    if p as u32 > MAX_PHI_INDEX {
        return Err(PhiError::IndexTooLarge(p as u32));
    }
    let m = a.rows();
    if p == 0 || m == 0 {
        return Ok(vec![Vec::new(); p]);
    }
    let size = m + p;
    let mut aug = DenseMatrix::zeros(size, size);
    for i in 0..m {
        for j in 0..m {
            aug[(i, j)] = a[(i, j)];
        }
    }
    aug[(0, m)] = 1.0;
    for i in 0..p.saturating_sub(1) {
        aug[(m + i, m + i + 1)] = 1.0;
    }
    let e = expm_dense(&aug)?;
    Ok((0..p)
        .map(|k| (0..m).map(|i| e[(i, m + k)]).collect())
        .collect())
}

/// Dense matrices φ_0(A), …, φ_p(A).
///
/// Taylor expansion of φ_p on A/2^s followed by s applications of the
/// doubling relation
/// φ_k(2X) = 2^{-k} (φ_0(X) φ_k(X) + Σ_{j=1}^{k} φ_j(X) / (k-j)!).
pub fn phi_dense_family(p: usize, a: &DenseMatrix) -> Result<Vec<DenseMatrix>, PhiError> {
    check_square(a)?;
    if p as u32 > MAX_PHI_INDEX {
        return Err(PhiError::IndexTooLarge(p as u32));
    }
    let n = a.rows();
    let norm = a.norm_one();
    let squarings = if norm > FAMILY_THETA {
        (norm / FAMILY_THETA).log2().ceil() as i32
    } else {
        0
    };
    if squarings > 1000 {
        return Err(PhiError::EvaluationFailed { norm });
    }
    let y = &a.0 * 0.5_f64.powi(squarings);
    let ident = DMatrix::<f64>::identity(n, n);

    // φ_p(Y) ≈ Σ_{i≤K} Y^i / (p+i)!
    let inv_fact = |m: usize| 1.0 / factorial(m as u32);
    let mut top = &ident * inv_fact(p + FAMILY_TAYLOR_DEGREE);
    for i in (0..FAMILY_TAYLOR_DEGREE).rev() {
        top = &y * &top + &ident * inv_fact(p + i);
    }
    let mut family = vec![DMatrix::<f64>::zeros(n, n); p + 1];
    family[p] = top;
    for k in (0..p).rev() {
        family[k] = &y * &family[k + 1] + &ident * inv_fact(k);
    }

    // Square with φ_0 - I in slot 0 so small entries keep relative accuracy.
    family[0] = if p == 0 {
        &family[0] - &ident
    } else {
        &y * &family[1]
    };
    for _ in 0..squarings {
        let e = family[0].clone();
        let mut next = Vec::with_capacity(p + 1);
        next.push(&e * &e + &e * 2.0);
        for k in 1..=p {
            let mut acc = &e * &family[k] + &family[k] * 2.0;
            for j in 1..k {
                acc += &family[j] * inv_fact(k - j);
            }
            acc *= 0.5_f64.powi(k as i32);
            next.push(acc);
        }
        family = next;
    }
    family[0] += &ident;
    let family: Vec<DenseMatrix> = family.into_iter().map(DenseMatrix).collect();
    if family.iter().any(|m| !m.is_finite()) {
        return Err(PhiError::EvaluationFailed { norm });
    }
    Ok(family)
}

/// φ_k(A) as a dense matrix.
pub fn phi_dense(k: usize, a: &DenseMatrix) -> Result<DenseMatrix, PhiError> {
    let mut family = phi_dense_family(k, a)?;
    Ok(family.swap_remove(k))
}
