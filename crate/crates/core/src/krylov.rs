//! Adaptive Arnoldi approximation of φ_k(τL)v.
//!
//! φ_k(τL)v ≈ β V_M φ_k(τH_M) e_1 with β = ‖v‖. The subspace grows one
//! vector at a time and the error is checked only at the indices of
//! [`KrylovConfig::check_schedule`], using the φ_1 residual surrogate
//! τ·h_{M+1,M}·|e_Mᵀ φ_1(τH_M) e_1| relative to ‖φ_1(τH_M) e_1‖.

use thiserror::Error;

use crate::operators::{LinearOperator, OperatorError};
use crate::phi::{phi_dense_times_e1, DenseMatrix, PhiError};

/// A second Gram–Schmidt pass is made when the first one shrinks the vector
/// below this fraction of its norm.
const REORTH_RATIO: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// h_{m+1,m} below this fraction of ‖L v_m‖ counts as an invariant subspace.
const BREAKDOWN_RATIO: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KrylovError {
    #[error("Krylov config: {0}")]
    InvalidConfig(String),
    #[error("phi index must be at least 1, got {0}")]
    InvalidIndex(u32),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Phi(#[from] PhiError),
    #[error("Arnoldi breakdown: non-finite basis vector at dimension {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrylovConfig {
    pub tol: f64,
    pub m_max: usize,
    pub check_schedule: Vec<usize>,
}

impl KrylovConfig {
    /// Config with the default check schedule for `m_max`.
    pub fn new(tol: f64, m_max: usize) -> Result<Self, KrylovError> {
        if m_max == 0 {
            return Err(KrylovError::InvalidConfig("m_max must be at least 1".into()));
        }
        let cfg = Self {
            tol,
            m_max,
            check_schedule: default_check_schedule(m_max),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), KrylovError> {
        if !(self.tol > 0.0) {
            return Err(KrylovError::InvalidConfig(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.m_max == 0 {
            return Err(KrylovError::InvalidConfig("m_max must be at least 1".into()));
        }
        if self.check_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(KrylovError::InvalidConfig(
                "check schedule must be strictly increasing".into(),
            ));
        }
        if self.check_schedule.first() == Some(&0) {
            return Err(KrylovError::InvalidConfig(
                "check schedule indices start at 1".into(),
            ));
        }
        if self.check_schedule.last() != Some(&self.m_max) {
            return Err(KrylovError::InvalidConfig(
                "check schedule must end at m_max".into(),
            ));
        }
        Ok(())
    }

    pub fn with_tol(&self, tol: f64) -> Result<Self, KrylovError> {
        let cfg = Self {
            tol,
            ..self.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            m_max: 100,
            check_schedule: default_check_schedule(100),
        }
    }
}

/// Error-check indices: m_1 = 1, then the smallest m with m³ at least the
/// sum of the cubes of all earlier indices, ending at `m_max`.
pub fn default_check_schedule(m_max: usize) -> Vec<usize> {
    let mut out = Vec::new();
    if m_max == 0 {
        return out;
    }
    let mut m = 1usize;
    let mut cubes = 0u128;
    loop {
        out.push(m);
        cubes += (m as u128).pow(3);
        if m >= m_max {
            break;
        }
        let mut next = m + 1;
        while (next as u128).pow(3) < cubes {
            next += 1;
        }
        m = next.min(m_max);
    }
    out
}

/// Arnoldi process on (L, v), extended one vector at a time.
#[derive(Debug)]
pub struct Arnoldi<'a> {
    op: &'a LinearOperator,
    beta: f64,
    basis: Vec<Vec<f64>>,
    /// Column j holds h_{0..=j+1, j}.
    h_cols: Vec<Vec<f64>>,
    breakdown: bool,
    matvecs: usize,
}

impl<'a> Arnoldi<'a> {
    pub fn new(op: &'a LinearOperator, v: &[f64]) -> Result<Self, KrylovError> {
        if v.len() != op.dim() {
            return Err(OperatorError::DimensionMismatch {
                expected: op.dim(),
                got: v.len(),
            }
            .into());
        }
        let beta = norm2(v);
        if !beta.is_finite() {
            return Err(KrylovError::NonFinite(0));
        }
        let basis = if beta > 0.0 {
            vec![v.iter().map(|x| x / beta).collect()]
        } else {
            Vec::new()
        };
        Ok(Self {
            op,
            beta,
            basis,
            h_cols: Vec::new(),
            breakdown: beta == 0.0,
            matvecs: 0,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Current dimension M (number of completed Arnoldi steps).
    pub fn dim(&self) -> usize {
        self.h_cols.len()
    }

    pub fn is_breakdown(&self) -> bool {
        self.breakdown
    }

    pub fn matvecs(&self) -> usize {
        self.matvecs
    }

    /// h_{M+1,M}; zero after a breakdown or before the first step.
    pub fn h_next(&self) -> f64 {
        match self.h_cols.last() {
            Some(col) if !self.breakdown => col[col.len() - 1],
            _ => 0.0,
        }
    }

    /// Adds one basis vector. No-op after a breakdown.
    pub fn extend(&mut self) -> Result<(), KrylovError> {
        if self.breakdown {
            return Ok(());
        }
        let m = self.h_cols.len();
        let mut w = self.op.apply(&self.basis[m])?;
        self.matvecs += 1;
        let w_norm = norm2(&w);
        let mut h = vec![0.0; m + 2];
        for (i, vi) in self.basis.iter().enumerate() {
            let hij = dot(&w, vi);
            axpy(-hij, vi, &mut w);
            h[i] = hij;
        }
        let mut rest = norm2(&w);
        if rest > 0.0 && rest < REORTH_RATIO * w_norm {
            for (i, vi) in self.basis.iter().enumerate() {
                let c = dot(&w, vi);
                axpy(-c, vi, &mut w);
                h[i] += c;
            }
            rest = norm2(&w);
        }
        if !rest.is_finite() || h.iter().any(|x| !x.is_finite()) {
            return Err(KrylovError::NonFinite(m + 1));
        }
        if rest <= BREAKDOWN_RATIO * w_norm || rest == 0.0 {
            h[m + 1] = 0.0;
            self.h_cols.push(h);
            self.breakdown = true;
            return Ok(());
        }
        h[m + 1] = rest;
        for x in w.iter_mut() {
            *x /= rest;
        }
        self.h_cols.push(h);
        self.basis.push(w);
        Ok(())
    }

    /// The M×M Hessenberg matrix H_M.
    pub fn hessenberg(&self) -> DenseMatrix {
        let m = self.dim();
        let mut h = DenseMatrix::zeros(m, m);
        for (j, col) in self.h_cols.iter().enumerate() {
            for (i, &x) in col.iter().enumerate().take(m) {
                h[(i, j)] = x;
            }
        }
        h
    }

    /// The first M basis vectors.
    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis[..self.dim().min(self.basis.len())]
    }

    /// v_{M+1}, when the process has not broken down.
    pub fn next_vector(&self) -> Option<&[f64]> {
        if self.breakdown {
            None
        } else {
            self.basis.get(self.dim()).map(|v| v.as_slice())
        }
    }

    /// β · V_M · y.
    pub fn combine(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.op.dim()];
        for (vi, &yi) in self.basis().iter().zip(y) {
            axpy(self.beta * yi, vi, &mut out);
        }
        out
    }
}

/// An adaptively sized Krylov basis for (L, v) at time scale τ.
#[derive(Debug)]
pub struct AdaptiveBasis<'a> {
    pub arnoldi: Arnoldi<'a>,
    pub tau: f64,
    pub est_error: f64,
    pub converged: bool,
    /// φ_1(τH_M)e_1 at the accepted dimension.
    pub phi1_e1: Vec<f64>,
}

/// Grows the Arnoldi basis for (L, v) until the φ_1 surrogate at step τ is
/// below `cfg.tol` (checked at schedule indices) or `cfg.m_max` is reached.
pub fn adaptive_basis<'a>(
    op: &'a LinearOperator,
    v: &[f64],
    tau: f64,
    cfg: &KrylovConfig,
) -> Result<AdaptiveBasis<'a>, KrylovError> {
    cfg.validate()?;
    let mut arnoldi = Arnoldi::new(op, v)?;
    if arnoldi.beta() == 0.0 {
        return Ok(AdaptiveBasis {
            arnoldi,
            tau,
            est_error: 0.0,
            converged: true,
            phi1_e1: Vec::new(),
        });
    }
    let mut checks = cfg.check_schedule.iter().copied().peekable();
    loop {
        arnoldi.extend()?;
        let m = arnoldi.dim();
        while checks.peek().is_some_and(|&c| c < m) {
            checks.next();
        }
        let scheduled = checks.peek() == Some(&m);
        if !(scheduled || arnoldi.is_breakdown() || m >= cfg.m_max) {
            continue;
        }
        let th = arnoldi.hessenberg().scaled(tau);
        let phi1 = phi_dense_times_e1(1, &th)?.swap_remove(0);
        let scale = norm2(&phi1);
        let est = if arnoldi.is_breakdown() || scale == 0.0 {
            0.0
        } else {
            (tau * arnoldi.h_next() * phi1[m - 1]).abs() / scale
        };
        let converged = arnoldi.is_breakdown() || est <= cfg.tol;
        if converged || m >= cfg.m_max {
            return Ok(AdaptiveBasis {
                arnoldi,
                tau,
                est_error: est,
                converged,
                phi1_e1: phi1,
            });
        }
    }
}

#[derive(Debug, Clone)]
pub struct KrylovResult {
    pub approximation: Vec<f64>,
    pub dim_used: usize,
    pub matvecs: usize,
    pub est_error: f64,
    pub converged: bool,
    /// Orthonormal basis columns v_1..v_M.
    pub basis: Vec<Vec<f64>>,
    pub hessenberg: DenseMatrix,
    /// h_{M+1,M} and v_{M+1} for checking the Arnoldi relation.
    pub h_next: f64,
    pub next_vector: Option<Vec<f64>>,
}

/// Approximates φ_k(τL)v, k ≥ 1.
pub fn phi_times_vector(
    op: &LinearOperator,
    k: u32,
    tau: f64,
    v: &[f64],
    cfg: &KrylovConfig,
) -> Result<KrylovResult, KrylovError> {
    if k == 0 {
        return Err(KrylovError::InvalidIndex(k));
    }
    cfg.validate()?;
    if op.is_zero() {
        if v.len() != op.dim() {
            return Err(OperatorError::DimensionMismatch {
                expected: op.dim(),
                got: v.len(),
            }
            .into());
        }
        let w = crate::phi::phi_scalar(k, 0.0)?;
        return Ok(KrylovResult {
            approximation: v.iter().map(|x| w * x).collect(),
            dim_used: 0,
            matvecs: 0,
            est_error: 0.0,
            converged: true,
            basis: Vec::new(),
            hessenberg: DenseMatrix::zeros(0, 0),
            h_next: 0.0,
            next_vector: None,
        });
    }
    let ab = adaptive_basis(op, v, tau, cfg)?;
    let m = ab.arnoldi.dim();
    let approximation = if m == 0 {
        vec![0.0; op.dim()]
    } else {
        let th = ab.arnoldi.hessenberg().scaled(tau);
        let y = phi_dense_times_e1(k as usize, &th)?.swap_remove(k as usize - 1);
        ab.arnoldi.combine(&y)
    };
    Ok(KrylovResult {
        approximation,
        dim_used: m,
        matvecs: ab.arnoldi.matvecs(),
        est_error: ab.est_error,
        converged: ab.converged,
        basis: ab.arnoldi.basis().to_vec(),
        hessenberg: ab.arnoldi.hessenberg(),
        h_next: ab.arnoldi.h_next(),
        next_vector: ab.arnoldi.next_vector().map(|v| v.to_vec()),
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // independent partial sums so the loop vectorizes
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (xa, xb) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += xa[k] * xb[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
