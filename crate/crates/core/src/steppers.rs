//! One-step exponential integrators and the fixed-step driver.
//!
//! All steppers work on autonomous problems u' = f(u). The transformed and
//! partitioned steppers share one implementation: the unpartitioned method is
//! the P = 1 case.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::krylov::{axpy, KrylovConfig};
use crate::operators::{LinearOperator, OperatorError};
use crate::phi::{expm_dense, DenseMatrix, PhiError};
use crate::tableaux::{
    eval_coeff, transform, CoefficientExpr, EvalError, EvalStats, ExprkTableau, FusedEvaluator,
    TableauError, TransformedTableau,
};

/// Largest operator dimension accepted by the dense stability diagnostic.
pub const STABILITY_MAX_DIM: usize = 200;

pub type Rhs = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type OperatorBuilder = Arc<dyn Fn(&[f64]) -> Arc<LinearOperator> + Send + Sync>;

/// One additive piece f^p of the right-hand side with its linear operator
/// L^p(u_n).
#[derive(Clone)]
pub struct Partition {
    pub name: String,
    pub rhs: Rhs,
    pub operator: OperatorBuilder,
}

impl fmt::Debug for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Partition").field("name", &self.name).finish()
    }
}

/// u' = Σ_p f^p(u), each part paired with an operator builder.
#[derive(Clone, Debug)]
pub struct SplitProblem {
    pub name: String,
    pub dim: usize,
    pub parts: Vec<Partition>,
}

impl SplitProblem {
    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn rhs_part(&self, p: usize, u: &[f64]) -> Vec<f64> {
        (self.parts[p].rhs)(u)
    }

    pub fn rhs_full(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for part in &self.parts {
            axpy(1.0, &(part.rhs)(u), &mut out);
        }
        out
    }

    pub fn operators(&self, u: &[f64]) -> Vec<Arc<LinearOperator>> {
        self.parts.iter().map(|p| (p.operator)(u)).collect()
    }

    /// Σ_p L^p(u), or the single operator when P = 1.
    pub fn full_operator(&self, u: &[f64]) -> Result<Arc<LinearOperator>, OperatorError> {
        let mut ops = self.operators(u);
        if ops.len() == 1 {
            return Ok(ops.pop().unwrap());
        }
        let nonzero: Vec<_> = ops.into_iter().filter(|o| !o.is_zero()).collect();
        match nonzero.len() {
            0 => Ok(Arc::new(LinearOperator::zero(self.dim))),
            1 => Ok(nonzero.into_iter().next().unwrap()),
            _ => Ok(Arc::new(LinearOperator::sum(nonzero)?)),
        }
    }

    /// The same problem viewed as a single partition (f_full, Σ_p L^p).
    pub fn merged(&self) -> SplitProblem {
        if self.parts.len() == 1 {
            return self.clone();
        }
        let this = Arc::new(self.clone());
        let rhs_src = this.clone();
        let op_src = this.clone();
        SplitProblem {
            name: format!("{}-merged", self.name),
            dim: self.dim,
            parts: vec![Partition {
                name: "full".into(),
                rhs: Arc::new(move |u| rhs_src.rhs_full(u)),
                operator: Arc::new(move |u| {
                    op_src
                        .full_operator(u)
                        .expect("partition operators share the problem dimension")
                }),
            }],
        }
    }
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("state has length {got}, problem dimension is {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("stepper needs {expected} partitions, problem has {got}")]
    PartitionCount { expected: usize, got: usize },
    #[error("{context}: {source}")]
    Coefficient {
        context: String,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Tableau(#[from] TableauError),
    #[error(transparent)]
    Phi(#[from] PhiError),
    #[error("step {step} of {total} failed: {source}")]
    AtStep {
        step: usize,
        total: usize,
        #[source]
        source: Box<StepError>,
    },
    #[error("state became non-finite in step {0}")]
    NonFinite(usize),
    #[error("number of steps must be at least 1")]
    NoSteps,
    #[error("stability diagnostic needs dense operators of equal dimension ≤ {STABILITY_MAX_DIM}, got {0}")]
    TooLarge(usize),
}

/// How coefficient expressions are applied to vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalMode {
    /// One shared Krylov basis per (operator, vector).
    #[default]
    Fused,
    /// One Krylov solve per φ node, following the expression tree.
    Compositional,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepConfig {
    pub krylov: KrylovConfig,
    pub mode: EvalMode,
}

impl StepConfig {
    pub fn with_tol(tol: f64) -> Result<Self, crate::krylov::KrylovError> {
        Ok(Self {
            krylov: KrylovConfig::default().with_tol(tol)?,
            mode: EvalMode::Fused,
        })
    }
}

/// Everything one step produced.
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// U_1..U_s; U_1 = u_n.
    pub stages: Vec<Vec<f64>>,
    /// `stage_rhs[i][p]` = f^p(U_{i+1}).
    pub stage_rhs: Vec<Vec<Vec<f64>>>,
    pub next: Vec<f64>,
    pub stats: EvalStats,
}

/// expr(hL)·v for a fixed (L, v), either through a shared basis or one
/// solve per call.
enum VectorFunctions<'a> {
    Fused(FusedEvaluator),
    Compositional {
        op: &'a LinearOperator,
        h: f64,
        v: Vec<f64>,
        cfg: &'a KrylovConfig,
    },
}

impl<'a> VectorFunctions<'a> {
    fn new(
        op: &'a LinearOperator,
        h: f64,
        v: Vec<f64>,
        exprs: &[&CoefficientExpr],
        cfg: &'a StepConfig,
        stats: &mut EvalStats,
        context: &dyn Fn() -> String,
    ) -> Result<Self, StepError> {
        match cfg.mode {
            EvalMode::Fused => {
                let ev = FusedEvaluator::new(op, h, &v, exprs, &cfg.krylov).map_err(|source| {
                    StepError::Coefficient {
                        context: context(),
                        source,
                    }
                })?;
                stats.add(ev.stats);
                Ok(Self::Fused(ev))
            }
            EvalMode::Compositional => Ok(Self::Compositional {
                op,
                h,
                v,
                cfg: &cfg.krylov,
            }),
        }
    }

    fn apply(
        &self,
        e: &CoefficientExpr,
        stats: &mut EvalStats,
        context: &dyn Fn() -> String,
    ) -> Result<Vec<f64>, StepError> {
        let wrap = |source| StepError::Coefficient {
            context: format!("{} coefficient {}", context(), e.to_prefix()),
            source,
        };
        match self {
            Self::Fused(ev) => ev.apply(e).map_err(wrap),
            Self::Compositional { op, h, v, cfg } => {
                let (w, s) = eval_coeff(e, op, *h, v, cfg).map_err(wrap)?;
                stats.add(s);
                Ok(w)
            }
        }
    }
}

fn check_step(h: f64, u: &[f64], dim: usize) -> Result<(), StepError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(StepError::InvalidStep(h));
    }
    if u.len() != dim {
        return Err(StepError::Dimension {
            expected: dim,
            got: u.len(),
        });
    }
    Ok(())
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn apply_op(op: &LinearOperator, v: &[f64], stats: &mut EvalStats) -> Result<Vec<f64>, StepError> {
    if op.is_zero() {
        return Ok(vec![0.0; v.len()]);
    }
    stats.matvecs += 1;
    Ok(op.apply(v)?)
}

/// One step of the method in its original form with remainder
/// g(y) = f(y) - L·y:
/// Y_i = y_n + h c_i φ_1(c_i hL) f(y_n) + h Σ_{j=2}^{i-1} a_{ij}(hL)(g(Y_j) - g(y_n)),
/// y_{n+1} = y_n + h φ_1(hL) f(y_n) + h Σ_{j=2}^{s} b_j(hL)(g(Y_j) - g(y_n)).
pub fn step_exprk_original(
    t: &ExprkTableau,
    op: &LinearOperator,
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    y: &[f64],
    h: f64,
    cfg: &StepConfig,
) -> Result<StepRecord, StepError> {
    t.validate()?;
    check_step(h, y, op.dim())?;
    let s = t.s;
    let mut stats = EvalStats::default();
    let f_n = f(y);

    let stage_first: Vec<CoefficientExpr> = (0..s)
        .map(|i| {
            if t.c[i] == 0.0 {
                CoefficientExpr::zero()
            } else {
                (t.c[i] * CoefficientExpr::phi(1, t.c[i])).simplify()
            }
        })
        .collect();
    let phi1 = CoefficientExpr::phi(1, 1.0);
    let mut first_exprs: Vec<&CoefficientExpr> =
        stage_first.iter().filter(|e| !e.is_zero()).collect();
    first_exprs.push(&phi1);
    let ev_fn = VectorFunctions::new(op, h, f_n.clone(), &first_exprs, cfg, &mut stats, &|| {
        "f(y_n) basis".into()
    })?;

    let mut stages = vec![y.to_vec()];
    let mut stage_rhs = vec![vec![f_n.clone()]];
    let mut ev_dg: Vec<Option<VectorFunctions>> = vec![None];
    for i in 1..s {
        let ctx = || format!("stage {}", i + 1);
        let mut yi = y.to_vec();
        if !stage_first[i].is_zero() {
            axpy(h, &ev_fn.apply(&stage_first[i], &mut stats, &ctx)?, &mut yi);
        }
        for (j, ev) in ev_dg.iter().enumerate().take(i).skip(1) {
            if let Some(ev) = ev {
                if !t.a[i][j].is_zero() {
                    axpy(h, &ev.apply(&t.a[i][j], &mut stats, &ctx)?, &mut yi);
                }
            }
        }
        let fi = f(&yi);
        let mut dg = sub(&fi, &f_n);
        let l_diff = apply_op(op, &sub(&yi, y), &mut stats)?;
        axpy(-1.0, &l_diff, &mut dg);
        let exprs: Vec<&CoefficientExpr> = ((i + 1)..s)
            .map(|k| &t.a[k][i])
            .chain(std::iter::once(&t.b[i]))
            .filter(|e| !e.is_zero())
            .collect();
        ev_dg.push(if exprs.is_empty() {
            None
        } else {
            Some(VectorFunctions::new(op, h, dg, &exprs, cfg, &mut stats, &ctx)?)
        });
        stages.push(yi);
        stage_rhs.push(vec![fi]);
    }

    let ctx = || "update".to_string();
    let mut next = y.to_vec();
    axpy(h, &ev_fn.apply(&phi1, &mut stats, &ctx)?, &mut next);
    for (j, ev) in ev_dg.iter().enumerate().skip(1) {
        if let Some(ev) = ev {
            if !t.b[j].is_zero() {
                axpy(h, &ev.apply(&t.b[j], &mut stats, &ctx)?, &mut next);
            }
        }
    }
    Ok(StepRecord {
        stages,
        stage_rhs,
        next,
        stats,
    })
}

/// One step of the transformed method on (L, f): the P = 1 case of
/// [`step_pexprk`].
pub fn step_exprk_transformed(
    tt: &TransformedTableau,
    op: &LinearOperator,
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    y: &[f64],
    h: f64,
    cfg: &StepConfig,
) -> Result<StepRecord, StepError> {
    transformed_core(tt, &[(op, f)], y, h, cfg)
}

/// One PEXPRK step:
/// U_i = u_n + h Σ_p α_{i1}(hL^p) f^p(u_n) + h Σ_p Σ_{j=2}^{i-1} α_{ij}(hL^p)(f^p(U_j) - f^p(u_n)),
/// and the update likewise with β. L^p is built once from u_n.
pub fn step_pexprk(
    tt: &TransformedTableau,
    prob: &SplitProblem,
    u: &[f64],
    h: f64,
    cfg: &StepConfig,
) -> Result<StepRecord, StepError> {
    check_step(h, u, prob.dim)?;
    let ops = prob.operators(u);
    let rhs: Vec<&(dyn Fn(&[f64]) -> Vec<f64> + Send + Sync)> =
        prob.parts.iter().map(|p| p.rhs.as_ref()).collect();
    let parts: Vec<(&LinearOperator, &dyn Fn(&[f64]) -> Vec<f64>)> = ops
        .iter()
        .zip(&rhs)
        .map(|(op, f)| (op.as_ref(), *f as &dyn Fn(&[f64]) -> Vec<f64>))
        .collect();
    transformed_core(tt, &parts, u, h, cfg)
}

fn transformed_core(
    tt: &TransformedTableau,
    parts: &[(&LinearOperator, &dyn Fn(&[f64]) -> Vec<f64>)],
    u: &[f64],
    h: f64,
    cfg: &StepConfig,
) -> Result<StepRecord, StepError> {
    let dim = parts.first().map_or(u.len(), |(op, _)| op.dim());
    check_step(h, u, dim)?;
    for (op, _) in parts {
        if op.dim() != dim {
            return Err(StepError::Dimension {
                expected: dim,
                got: op.dim(),
            });
        }
    }
    let s = tt.s;
    let mut stats = EvalStats::default();
    let f_n: Vec<Vec<f64>> = parts.iter().map(|(_, f)| f(u)).collect();

    let first_exprs: Vec<&CoefficientExpr> = (1..s)
        .map(|i| &tt.alpha[i][0])
        .chain(std::iter::once(&tt.beta[0]))
        .filter(|e| !e.is_zero())
        .collect();
    let mut ev_fn = Vec::with_capacity(parts.len());
    for (p, (op, _)) in parts.iter().enumerate() {
        ev_fn.push(VectorFunctions::new(
            op,
            h,
            f_n[p].clone(),
            &first_exprs,
            cfg,
            &mut stats,
            &|| format!("partition {} f(u_n) basis", p + 1),
        )?);
    }

    let mut stages = vec![u.to_vec()];
    let mut stage_rhs = vec![f_n.clone()];
    // ev_df[j][p] for stage j ≥ 1
    let mut ev_df: Vec<Vec<Option<VectorFunctions>>> = vec![Vec::new()];
    for i in 1..s {
        let mut ui = u.to_vec();
        for p in 0..parts.len() {
            let ctx = || format!("stage {}, partition {}", i + 1, p + 1);
            if !tt.alpha[i][0].is_zero() {
                axpy(h, &ev_fn[p].apply(&tt.alpha[i][0], &mut stats, &ctx)?, &mut ui);
            }
            for j in 1..i {
                if tt.alpha[i][j].is_zero() {
                    continue;
                }
                if let Some(ev) = &ev_df[j][p] {
                    axpy(h, &ev.apply(&tt.alpha[i][j], &mut stats, &ctx)?, &mut ui);
                }
            }
        }
        let exprs: Vec<&CoefficientExpr> = ((i + 1)..s)
            .map(|k| &tt.alpha[k][i])
            .chain(std::iter::once(&tt.beta[i]))
            .filter(|e| !e.is_zero())
            .collect();
        let mut rhs_i = Vec::with_capacity(parts.len());
        let mut evs = Vec::with_capacity(parts.len());
        for (p, (op, f)) in parts.iter().enumerate() {
            let fi = f(&ui);
            evs.push(if exprs.is_empty() {
                None
            } else {
                Some(VectorFunctions::new(
                    op,
                    h,
                    sub(&fi, &f_n[p]),
                    &exprs,
                    cfg,
                    &mut stats,
                    &|| format!("stage {}, partition {} difference basis", i + 1, p + 1),
                )?)
            });
            rhs_i.push(fi);
        }
        ev_df.push(evs);
        stages.push(ui);
        stage_rhs.push(rhs_i);
    }

    let mut next = u.to_vec();
    for p in 0..parts.len() {
        let ctx = || format!("update, partition {}", p + 1);
        if !tt.beta[0].is_zero() {
            axpy(h, &ev_fn[p].apply(&tt.beta[0], &mut stats, &ctx)?, &mut next);
        }
        for j in 1..s {
            if tt.beta[j].is_zero() {
                continue;
            }
            if let Some(ev) = &ev_df[j][p] {
                axpy(h, &ev.apply(&tt.beta[j], &mut stats, &ctx)?, &mut next);
            }
        }
    }
    Ok(StepRecord {
        stages,
        stage_rhs,
        next,
        stats,
    })
}

/// Order-2, two-partition step written in residuals:
/// u_{n+1} = u_n + h Σ_p φ_1(hL^{p'}) φ_1(hL^p) f^p(u_n)
///         + h Σ_p φ_2(hL^p)(f^p(U_2) - f^p(u_n) - L^p(U_2 - u_n)),
/// with U_2 = u_n + h Σ_p φ_1(hL^p) f^p(u_n) and p' the other partition.
pub fn step_pexprk2_residual(
    prob: &SplitProblem,
    u: &[f64],
    h: f64,
    cfg: &StepConfig,
) -> Result<StepRecord, StepError> {
    if prob.num_parts() != 2 {
        return Err(StepError::PartitionCount {
            expected: 2,
            got: prob.num_parts(),
        });
    }
    check_step(h, u, prob.dim)?;
    let ops = prob.operators(u);
    let mut stats = EvalStats::default();
    let phi1 = CoefficientExpr::phi(1, 1.0);
    let phi2 = CoefficientExpr::phi(2, 1.0);

    let f_n: Vec<Vec<f64>> = (0..2).map(|p| prob.rhs_part(p, u)).collect();
    let mut w = Vec::with_capacity(2);
    for p in 0..2 {
        let ctx = || format!("stage 2, partition {}", p + 1);
        let ev = VectorFunctions::new(&ops[p], h, f_n[p].clone(), &[&phi1], cfg, &mut stats, &ctx)?;
        w.push(ev.apply(&phi1, &mut stats, &ctx)?);
    }
    let mut u2 = u.to_vec();
    for wp in &w {
        axpy(h, wp, &mut u2);
    }
    let f_2: Vec<Vec<f64>> = (0..2).map(|p| prob.rhs_part(p, &u2)).collect();
    let du = sub(&u2, u);

    let mut next = u.to_vec();
    for p in 0..2 {
        let other = 1 - p;
        let ctx = || format!("update, partition {}", p + 1);
        let ev = VectorFunctions::new(&ops[other], h, w[p].clone(), &[&phi1], cfg, &mut stats, &ctx)?;
        axpy(h, &ev.apply(&phi1, &mut stats, &ctx)?, &mut next);

        let mut r = sub(&f_2[p], &f_n[p]);
        axpy(-1.0, &apply_op(&ops[p], &du, &mut stats)?, &mut r);
        let ev = VectorFunctions::new(&ops[p], h, r, &[&phi2], cfg, &mut stats, &ctx)?;
        axpy(h, &ev.apply(&phi2, &mut stats, &ctx)?, &mut next);
    }
    Ok(StepRecord {
        stages: vec![u.to_vec(), u2],
        stage_rhs: vec![f_n, f_2],
        next,
        stats,
    })
}

/// Which stepping algorithm to use.
#[derive(Debug, Clone)]
pub enum Stepper {
    /// Original form on (f_full, Σ_p L^p).
    Original(ExprkTableau),
    /// Transformed form on (f_full, Σ_p L^p).
    Transformed(TransformedTableau),
    /// PEXPRK over the problem's partitions.
    Partitioned(TransformedTableau),
    /// Order-2 residual form; needs exactly two partitions.
    ResidualOrder2,
}

impl Stepper {
    pub fn original(t: ExprkTableau) -> Self {
        Self::Original(t)
    }

    pub fn transformed(t: &ExprkTableau) -> Result<Self, TableauError> {
        Ok(Self::Transformed(transform(t)?))
    }

    pub fn partitioned(t: &ExprkTableau) -> Result<Self, TableauError> {
        Ok(Self::Partitioned(transform(t)?))
    }

    pub fn step(
        &self,
        prob: &SplitProblem,
        u: &[f64],
        h: f64,
        cfg: &StepConfig,
    ) -> Result<StepRecord, StepError> {
        match self {
            Self::Original(t) => {
                let op = prob.full_operator(u)?;
                step_exprk_original(t, &op, &|x| prob.rhs_full(x), u, h, cfg)
            }
            Self::Transformed(tt) => {
                let op = prob.full_operator(u)?;
                step_exprk_transformed(tt, &op, &|x| prob.rhs_full(x), u, h, cfg)
            }
            Self::Partitioned(tt) => step_pexprk(tt, prob, u, h, cfg),
            Self::ResidualOrder2 => step_pexprk2_residual(prob, u, h, cfg),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IntegrationResult {
    pub state: Vec<f64>,
    pub steps: usize,
    pub matvecs: usize,
    pub krylov_dims: usize,
}

/// Applies `stepper` `n_steps` times with h = (tf - t0)/n_steps, rebuilding
/// the partition operators at the start of every step.
pub fn integrate_fixed(
    stepper: &Stepper,
    prob: &SplitProblem,
    u0: &[f64],
    t0: f64,
    tf: f64,
    n_steps: usize,
    cfg: &StepConfig,
) -> Result<IntegrationResult, StepError> {
    if n_steps == 0 {
        return Err(StepError::NoSteps);
    }
    let h = (tf - t0) / n_steps as f64;
    let mut u = u0.to_vec();
    let mut stats = EvalStats::default();
    for step in 0..n_steps {
        let rec = stepper
            .step(prob, &u, h, cfg)
            .map_err(|e| StepError::AtStep {
                step: step + 1,
                total: n_steps,
                source: Box::new(e),
            })?;
        stats.add(rec.stats);
        if rec.next.iter().any(|x| !x.is_finite()) {
            return Err(StepError::NonFinite(step + 1));
        }
        u = rec.next;
    }
    Ok(IntegrationResult {
        state: u,
        steps: n_steps,
        matvecs: stats.matvecs,
        krylov_dims: stats.krylov_dims,
    })
}

/// Spectral radius of M = e^{hL¹} + e^{hL²} - I, the amplification matrix
/// of the two-partition exponential Euler step. Values above 1 indicate the
/// step is not power bounded.
pub fn stability_matrix_spectral_radius(
    l1: &LinearOperator,
    l2: &LinearOperator,
    h: f64,
) -> Result<f64, StepError> {
    let n = l1.dim();
    if l2.dim() != n || n > STABILITY_MAX_DIM {
        return Err(StepError::TooLarge(n.max(l2.dim())));
    }
    let e1 = expm_dense(&l1.to_dense().scaled(h))?;
    let e2 = expm_dense(&l2.to_dense().scaled(h))?;
    let m = &(&e1 + &e2) - &DenseMatrix::identity(n);
    Ok(spectral_radius(&m))
}

/// Largest eigenvalue modulus, from the real Schur form.
pub fn spectral_radius(m: &DenseMatrix) -> f64 {
    if m.rows() == 0 {
        return 0.0;
    }
    m.as_nalgebra()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}
