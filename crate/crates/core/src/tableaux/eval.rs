//! Applying coefficient expressions at z = hL to vectors.
//!
//! [`eval_coeff`] follows the expression tree literally, one Krylov solve per
//! φ node. [`FusedEvaluator`] builds a single Krylov basis for (L, v) and
//! evaluates any number of expressions against it: all φ_k(c·hL) commute, so
//! expr(hL)v ≈ β V_M expr(hH_M) e_1 for every expr at once.

use thiserror::Error;

use super::expr::CoefficientExpr;
use crate::krylov::{adaptive_basis, axpy, phi_times_vector, KrylovConfig, KrylovError};
use crate::operators::{LinearOperator, OperatorError, OperatorKind};
use crate::phi::{phi_dense_family, DenseMatrix, PhiError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("Krylov approximation for {context} did not converge (estimate {est:e} > tol {tol:e} at M = {dim})")]
    NotConverged {
        context: String,
        est: f64,
        tol: f64,
        dim: usize,
    },
    #[error(transparent)]
    Krylov(#[from] KrylovError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Phi(#[from] PhiError),
}

/// Work counters for coefficient applications.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalStats {
    pub matvecs: usize,
    /// Sum of Krylov dimensions over all bases built.
    pub krylov_dims: usize,
    pub bases: usize,
}

impl EvalStats {
    pub fn add(&mut self, other: EvalStats) {
        self.matvecs += other.matvecs;
        self.krylov_dims += other.krylov_dims;
        self.bases += other.bases;
    }
}

/// Dense φ-families of a small matrix at every abscissa scale needed by a
/// set of expressions.
#[derive(Debug, Clone)]
pub struct MatrixFunctions {
    a: DenseMatrix,
    /// (c, [φ_0(cA), …, φ_p(cA)])
    families: Vec<(f64, Vec<DenseMatrix>)>,
}

impl MatrixFunctions {
    pub fn new<'e>(
        a: DenseMatrix,
        exprs: impl IntoIterator<Item = &'e CoefficientExpr>,
    ) -> Result<Self, PhiError> {
        let mut needed: Vec<(f64, u32)> = Vec::new();
        for e in exprs {
            e.visit_phi(&mut |k, c| match needed.iter_mut().find(|(x, _)| *x == c) {
                Some(entry) => entry.1 = entry.1.max(k),
                None => needed.push((c, k)),
            });
        }
        let mut families = Vec::with_capacity(needed.len());
        for (c, k) in needed {
            families.push((c, phi_dense_family(k as usize, &a.scaled(c))?));
        }
        Ok(Self { a, families })
    }

    fn family(&self, k: u32, c: f64) -> &DenseMatrix {
        let (_, fam) = self
            .families
            .iter()
            .find(|(x, _)| *x == c)
            .expect("phi family was precomputed for every expression");
        &fam[k as usize]
    }

    /// expr(A) as a dense matrix.
    pub fn matrix(&self, e: &CoefficientExpr) -> DenseMatrix {
        let n = self.a.rows();
        match e {
            CoefficientExpr::Phi { k, c } => self.family(*k, *c).clone(),
            CoefficientExpr::Const(r) => DenseMatrix::identity(n).scaled(*r),
            CoefficientExpr::Scale(r, x) => self.matrix(x).scaled(*r),
            CoefficientExpr::Sum(xs) => xs
                .iter()
                .fold(DenseMatrix::zeros(n, n), |acc, x| &acc + &self.matrix(x)),
            CoefficientExpr::Prod(l, r) => &self.matrix(l) * &self.matrix(r),
            CoefficientExpr::ZMul(x) => &self.a * &self.matrix(x),
        }
    }

    /// expr(A)·y, evaluated right to left without forming expr(A).
    pub fn apply(&self, e: &CoefficientExpr, y: &[f64]) -> Vec<f64> {
        match e {
            CoefficientExpr::Phi { k, c } => self.family(*k, *c).mul_vec(y),
            CoefficientExpr::Const(r) => y.iter().map(|x| r * x).collect(),
            CoefficientExpr::Scale(r, x) => self.apply(x, y).into_iter().map(|v| r * v).collect(),
            CoefficientExpr::Sum(xs) => {
                let mut acc = vec![0.0; y.len()];
                for x in xs {
                    axpy(1.0, &self.apply(x, y), &mut acc);
                }
                acc
            }
            CoefficientExpr::Prod(l, r) => self.apply(l, &self.apply(r, y)),
            CoefficientExpr::ZMul(x) => self.a.mul_vec(&self.apply(x, y)),
        }
    }
}

/// expr(A) for a small dense matrix.
pub fn eval_dense(e: &CoefficientExpr, a: &DenseMatrix) -> Result<DenseMatrix, PhiError> {
    Ok(MatrixFunctions::new(a.clone(), [e])?.matrix(e))
}

/// expr(hL)·v, following the tree: products apply right factor first,
/// z-multiplication is h·L·(…), each φ_k node (k ≥ 1) is one Krylov solve
/// at τ = c·h, and φ_0 is applied as I + z·φ_1(z).
pub fn eval_coeff(
    e: &CoefficientExpr,
    op: &LinearOperator,
    h: f64,
    v: &[f64],
    cfg: &KrylovConfig,
) -> Result<(Vec<f64>, EvalStats), EvalError> {
    let mut stats = EvalStats::default();
    let out = eval_rec(e, op, h, v, cfg, &mut stats)?;
    Ok((out, stats))
}

fn eval_rec(
    e: &CoefficientExpr,
    op: &LinearOperator,
    h: f64,
    v: &[f64],
    cfg: &KrylovConfig,
    stats: &mut EvalStats,
) -> Result<Vec<f64>, EvalError> {
    if v.len() != op.dim() {
        return Err(OperatorError::DimensionMismatch {
            expected: op.dim(),
            got: v.len(),
        }
        .into());
    }
    Ok(match e {
        CoefficientExpr::Phi { k: 0, c } => {
            let phi1 = krylov_phi(op, 1, c * h, v, cfg, stats, e)?;
            let mut out = apply_counted(op, &phi1, stats)?;
            for (o, x) in out.iter_mut().zip(v) {
                *o = x + c * h * *o;
            }
            out
        }
        CoefficientExpr::Phi { k, c } => krylov_phi(op, *k, c * h, v, cfg, stats, e)?,
        CoefficientExpr::Const(r) => v.iter().map(|x| r * x).collect(),
        CoefficientExpr::Scale(r, x) => eval_rec(x, op, h, v, cfg, stats)?
            .into_iter()
            .map(|y| r * y)
            .collect(),
        CoefficientExpr::Sum(xs) => {
            let mut acc = vec![0.0; v.len()];
            for x in xs {
                axpy(1.0, &eval_rec(x, op, h, v, cfg, stats)?, &mut acc);
            }
            acc
        }
        CoefficientExpr::Prod(l, r) => {
            let inner = eval_rec(r, op, h, v, cfg, stats)?;
            eval_rec(l, op, h, &inner, cfg, stats)?
        }
        CoefficientExpr::ZMul(x) => {
            let inner = eval_rec(x, op, h, v, cfg, stats)?;
            apply_counted(op, &inner, stats)?
                .into_iter()
                .map(|y| h * y)
                .collect()
        }
    })
}

fn apply_counted(
    op: &LinearOperator,
    v: &[f64],
    stats: &mut EvalStats,
) -> Result<Vec<f64>, EvalError> {
    if op.is_zero() {
        return Ok(vec![0.0; v.len()]);
    }
    stats.matvecs += 1;
    Ok(op.apply(v)?)
}

fn krylov_phi(
    op: &LinearOperator,
    k: u32,
    tau: f64,
    v: &[f64],
    cfg: &KrylovConfig,
    stats: &mut EvalStats,
    node: &CoefficientExpr,
) -> Result<Vec<f64>, EvalError> {
    let r = phi_times_vector(op, k, tau, v, cfg)?;
    stats.matvecs += r.matvecs;
    stats.krylov_dims += r.dim_used;
    stats.bases += usize::from(r.dim_used > 0);
    if !r.converged {
        return Err(EvalError::NotConverged {
            context: node.to_prefix(),
            est: r.est_error,
            tol: cfg.tol,
            dim: r.dim_used,
        });
    }
    Ok(r.approximation)
}

#[derive(Debug)]
enum FusedNode {
    /// Zero operator: expr(0)·v.
    Scalar(Vec<f64>),
    /// v = 0.
    Empty(usize),
    Krylov {
        beta: f64,
        basis: Vec<Vec<f64>>,
        funcs: MatrixFunctions,
        dim: usize,
    },
    Blocks(Vec<FusedNode>),
}

/// A Krylov basis for (L, v) shared by a fixed set of expressions.
#[derive(Debug)]
pub struct FusedEvaluator {
    node: FusedNode,
    pub stats: EvalStats,
}

impl FusedEvaluator {
    /// Builds the basis for (`op`, `v`) at step `h` and precomputes the
    /// projected φ-families needed by `exprs`.
    ///
    /// Block-diagonal operators get one basis per block, and zero operators
    /// (or zero blocks) are evaluated at z = 0 without any Krylov work.
    pub fn new(
        op: &LinearOperator,
        h: f64,
        v: &[f64],
        exprs: &[&CoefficientExpr],
        cfg: &KrylovConfig,
    ) -> Result<Self, EvalError> {
        if v.len() != op.dim() {
            return Err(OperatorError::DimensionMismatch {
                expected: op.dim(),
                got: v.len(),
            }
            .into());
        }
        let mut stats = EvalStats::default();
        let node = build_node(op, h, v, exprs, cfg, &mut stats)?;
        Ok(Self { node, stats })
    }

    /// expr(hL)·v for one of the expressions given at construction.
    pub fn apply(&self, e: &CoefficientExpr) -> Result<Vec<f64>, EvalError> {
        apply_node(&self.node, e)
    }
}

fn build_node(
    op: &LinearOperator,
    h: f64,
    v: &[f64],
    exprs: &[&CoefficientExpr],
    cfg: &KrylovConfig,
    stats: &mut EvalStats,
) -> Result<FusedNode, EvalError> {
    if op.is_zero() {
        return Ok(FusedNode::Scalar(v.to_vec()));
    }
    if let OperatorKind::BlockDiag(blocks) = op.kind() {
        let mut nodes = Vec::with_capacity(blocks.len());
        let mut offset = 0;
        for b in blocks {
            let sub = &v[offset..offset + b.dim()];
            nodes.push(build_node(b, h, sub, exprs, cfg, stats)?);
            offset += b.dim();
        }
        return Ok(FusedNode::Blocks(nodes));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Ok(FusedNode::Empty(v.len()));
    }
    let ab = adaptive_basis(op, v, h, cfg)?;
    let dim = ab.arnoldi.dim();
    stats.matvecs += ab.arnoldi.matvecs();
    stats.krylov_dims += dim;
    stats.bases += 1;
    if !ab.converged {
        return Err(EvalError::NotConverged {
            context: "shared coefficient basis".into(),
            est: ab.est_error,
            tol: cfg.tol,
            dim,
        });
    }
    let hh = ab.arnoldi.hessenberg().scaled(h);
    let funcs = MatrixFunctions::new(hh, exprs.iter().copied())?;
    Ok(FusedNode::Krylov {
        beta: ab.arnoldi.beta(),
        basis: ab.arnoldi.basis().to_vec(),
        funcs,
        dim,
    })
}

fn apply_node(node: &FusedNode, e: &CoefficientExpr) -> Result<Vec<f64>, EvalError> {
    Ok(match node {
        FusedNode::Scalar(v) => {
            let w = e.eval_scalar(0.0)?;
            v.iter().map(|x| w * x).collect()
        }
        FusedNode::Empty(n) => vec![0.0; *n],
        FusedNode::Krylov {
            beta,
            basis,
            funcs,
            dim,
        } => {
            let mut e1 = vec![0.0; *dim];
            e1[0] = 1.0;
            let y = funcs.apply(e, &e1);
            let n = basis[0].len();
            let mut out = vec![0.0; n];
            for (vi, yi) in basis.iter().zip(&y) {
                axpy(beta * yi, vi, &mut out);
            }
            out
        }
        FusedNode::Blocks(nodes) => {
            let mut out = Vec::new();
            for n in nodes {
                out.extend(apply_node(n, e)?);
            }
            out
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::norm2;
    use crate::phi::phi_scalar;
    use crate::tableaux::{tableau, transform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn stable_dense(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let shift = a.norm_one();
        for i in 0..n {
            a[(i, i)] -= shift;
        }
        a
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rel(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm2(&d) / norm2(b).max(1e-300)
    }

    fn beta1_order2() -> CoefficientExpr {
        transform(&tableau(2).unwrap()).unwrap().beta[0].clone()
    }

    #[test]
    fn const_one_is_identity() {
        let op = LinearOperator::dense(stable_dense(5, 1)).unwrap();
        let v = random_vec(5, 2);
        let (w, stats) =
            eval_coeff(&CoefficientExpr::one(), &op, 0.1, &v, &KrylovConfig::default()).unwrap();
        assert_eq!(w, v);
        assert_eq!(stats.matvecs, 0);
    }

    #[test]
    fn beta1_with_zero_operator() {
        let op = LinearOperator::zero(4);
        let v = random_vec(4, 3);
        let (w, stats) =
            eval_coeff(&beta1_order2(), &op, 0.1, &v, &KrylovConfig::default()).unwrap();
        assert!(rel(&w, &v) < 1e-16);
        assert_eq!(stats.matvecs, 0);
    }

    #[test]
    fn beta1_on_diagonal_matches_scalar_formula() {
        let lambda = [-3.0, -0.5, 0.0, 0.7, -40.0];
        let op = LinearOperator::diagonal(lambda.to_vec());
        let v = random_vec(5, 4);
        let h = 0.1;
        let (w, _) = eval_coeff(&beta1_order2(), &op, h, &v, &KrylovConfig::default()).unwrap();
        for i in 0..5 {
            let z = h * lambda[i];
            let p1 = phi_scalar(1, z).unwrap();
            let p2 = phi_scalar(2, z).unwrap();
            let want = (p1 - z * p2 * p1) * v[i];
            assert!((w[i] - want).abs() < 1e-12 * want.abs().max(1.0), "i={i}");
        }
    }

    #[test]
    fn phi0_node_is_exponential() {
        let a = stable_dense(10, 5);
        let op = LinearOperator::dense(a.clone()).unwrap();
        let v = random_vec(10, 6);
        let e = CoefficientExpr::phi(0, 0.5);
        let (w, _) = eval_coeff(&e, &op, 0.3, &v, &KrylovConfig::default()).unwrap();
        let want = crate::phi::expm_dense(&a.scaled(0.15)).unwrap().mul_vec(&v);
        assert!(rel(&w, &want) < 1e-11);
    }

    #[test]
    fn fused_matches_compositional_and_dense() {
        let a = stable_dense(30, 7);
        let op = LinearOperator::dense(a.clone()).unwrap();
        let v = random_vec(30, 8);
        let h = 0.2;
        let cfg = KrylovConfig::default();
        for order in 2..=4 {
            let tt = transform(&tableau(order).unwrap()).unwrap();
            let exprs: Vec<&CoefficientExpr> = tt
                .alpha
                .iter()
                .flatten()
                .chain(&tt.beta)
                .filter(|e| !e.is_zero())
                .collect();
            let fused = FusedEvaluator::new(&op, h, &v, &exprs, &cfg).unwrap();
            for e in &exprs {
                let f = fused.apply(e).unwrap();
                let (c, _) = eval_coeff(e, &op, h, &v, &cfg).unwrap();
                let d = eval_dense(e, &a.scaled(h)).unwrap().mul_vec(&v);
                assert!(rel(&f, &d) < 1e-10, "order {order} fused {e}");
                assert!(rel(&c, &d) < 1e-10, "order {order} compositional {e}");
            }
        }
    }

    #[test]
    fn fused_splits_block_diagonal_and_skips_zero_blocks() {
        let a = stable_dense(6, 9);
        let block = Arc::new(LinearOperator::dense(a.clone()).unwrap());
        let op = LinearOperator::block_diag(vec![block, Arc::new(LinearOperator::zero(4))]);
        let v = random_vec(10, 10);
        let e = CoefficientExpr::phi(1, 1.0) - (CoefficientExpr::phi(2, 0.5)).zmul();
        let fused = FusedEvaluator::new(&op, 0.5, &v, &[&e], &KrylovConfig::default()).unwrap();
        let w = fused.apply(&e).unwrap();
        let top = eval_dense(&e, &a.scaled(0.5)).unwrap().mul_vec(&v[..6]);
        assert!(rel(&w[..6], &top) < 1e-11);
        for i in 6..10 {
            assert!((w[i] - v[i]).abs() < 1e-16);
        }
        assert_eq!(fused.stats.bases, 1);
        assert!(fused.stats.krylov_dims <= 6);
    }

    #[test]
    fn fused_zero_vector_and_zero_operator() {
        let op = LinearOperator::dense(stable_dense(4, 11)).unwrap();
        let e = CoefficientExpr::phi(2, 1.0);
        let fused = FusedEvaluator::new(&op, 1.0, &[0.0; 4], &[&e], &KrylovConfig::default())
            .unwrap();
        assert_eq!(fused.apply(&e).unwrap(), vec![0.0; 4]);
        assert_eq!(fused.stats.matvecs, 0);
        let z = LinearOperator::zero(3);
        let fused = FusedEvaluator::new(&z, 1.0, &[2.0, 4.0, 6.0], &[&e], &KrylovConfig::default())
            .unwrap();
        assert_eq!(fused.apply(&e).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(fused.stats.krylov_dims, 0);
    }

    #[test]
    fn fused_reports_non_convergence() {
        let op = LinearOperator::dense(stable_dense(40, 12).scaled(50.0)).unwrap();
        let v = random_vec(40, 13);
        let e = CoefficientExpr::phi(1, 1.0);
        let cfg = KrylovConfig::new(1e-12, 4).unwrap();
        assert!(matches!(
            FusedEvaluator::new(&op, 1.0, &v, &[&e], &cfg),
            Err(EvalError::NotConverged { dim: 4, .. })
        ));
    }
}
