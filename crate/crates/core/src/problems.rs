//! The two-species Gray–Scott benchmark on the periodic unit square, its
//! partitionings, and a small semilinear oracle problem.
//!
//! State layout is species-major: a at indices `0..n²`, b at `n²..2n²`, and
//! grid node (row y, column x) at offset `y·n + x` within each species.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::operators::{LinearOperator, OperatorError};
use crate::phi::DenseMatrix;
use crate::steppers::{Partition, SplitProblem};

/// Final time of the convergence experiments.
pub const GS_TSPAN: f64 = 0.262144;
/// Grid side used for the full-scale experiments.
pub const GS_PAPER_GRID: usize = 300;
/// Grid side used by default at desk scale.
pub const GS_DESK_GRID: usize = 64;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("the spatial split needs an even grid side, got {0}")]
    OddGrid(usize),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// How the Gray–Scott right-hand side is divided into partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partitioning {
    /// One partition with the full right-hand side.
    None,
    /// One partition per chemical species.
    Species,
    /// Lower and upper half of the domain.
    Space,
    /// Diffusion and reaction.
    Physics,
    /// Diffusion exponentially, reaction explicitly (zero operator).
    Imex,
}

impl Partitioning {
    pub const SPLITS: [Partitioning; 4] = [
        Partitioning::Species,
        Partitioning::Space,
        Partitioning::Physics,
        Partitioning::Imex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Species => "species",
            Self::Space => "space",
            Self::Physics => "physics",
            Self::Imex => "imex",
        }
    }
}

impl std::str::FromStr for Partitioning {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "species" => Ok(Self::Species),
            "space" => Ok(Self::Space),
            "physics" => Ok(Self::Physics),
            "imex" => Ok(Self::Imex),
            other => Err(ProblemError::InvalidParameter(format!(
                "unknown partition '{other}'"
            ))),
        }
    }
}

/// Linear operator used by the unpartitioned forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JacobianKind {
    /// The full analytic Jacobian.
    Full,
    /// Its species-diagonal blocks only.
    Block,
}

impl JacobianKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Block => "block",
        }
    }
}

impl std::str::FromStr for JacobianKind {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "block" => Ok(Self::Block),
            other => Err(ProblemError::InvalidParameter(format!(
                "unknown jacobian '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayScottModel {
    pub n: usize,
    pub d_a: f64,
    pub d_b: f64,
    pub feed: f64,
    pub kill: f64,
}

/// The standard parameter set (feed 0.04, kill 0.06, d_a = 2, d_b = 1) on an
/// n×n grid.
pub fn gs_default(n: usize) -> GrayScottModel {
    GrayScottModel {
        n,
        d_a: 2.0,
        d_b: 1.0,
        feed: 0.04,
        kill: 0.06,
    }
}

impl GrayScottModel {
    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.n < 3 {
            return Err(ProblemError::InvalidParameter(format!(
                "grid side must be at least 3, got {}",
                self.n
            )));
        }
        for (name, v) in [
            ("d_a", self.d_a),
            ("d_b", self.d_b),
            ("feed", self.feed),
            ("kill", self.kill),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ProblemError::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Number of grid nodes n².
    pub fn nodes(&self) -> usize {
        self.n * self.n
    }

    /// State length 2n².
    pub fn dim(&self) -> usize {
        2 * self.nodes()
    }

    fn check_len(&self, u: &[f64]) -> Result<(), ProblemError> {
        if u.len() != self.dim() {
            return Err(OperatorError::DimensionMismatch {
                expected: self.dim(),
                got: u.len(),
            }
            .into());
        }
        Ok(())
    }

    /// Periodic five-point Laplacian of one species field, times d·n².
    fn laplacian_into(&self, field: &[f64], d: f64, out: &mut [f64]) {
        let n = self.n;
        let w = d * (n * n) as f64;
        for y in 0..n {
            let up = ((y + 1) % n) * n;
            let down = ((y + n - 1) % n) * n;
            let row = y * n;
            for x in 0..n {
                let right = (x + 1) % n;
                let left = (x + n - 1) % n;
                out[row + x] = w
                    * (field[row + right] + field[row + left] + field[up + x] + field[down + x]
                        - 4.0 * field[row + x]);
            }
        }
    }

    /// Diffusion part (d_a Δa, d_b Δb).
    pub fn diffusion(&self, u: &[f64]) -> Vec<f64> {
        let m = self.nodes();
        let mut out = vec![0.0; 2 * m];
        let (oa, ob) = out.split_at_mut(m);
        self.laplacian_into(&u[..m], self.d_a, oa);
        self.laplacian_into(&u[m..], self.d_b, ob);
        out
    }

    /// Reaction part (-ab² + f(1 - a), ab² - (f + k)b).
    pub fn reaction(&self, u: &[f64]) -> Vec<f64> {
        let m = self.nodes();
        let mut out = vec![0.0; 2 * m];
        for i in 0..m {
            let (a, b) = (u[i], u[m + i]);
            let abb = a * b * b;
            out[i] = -abb + self.feed * (1.0 - a);
            out[m + i] = abb - (self.feed + self.kill) * b;
        }
        out
    }

    /// Diffusion plus reaction for one species: 0 for a, 1 for b. The other
    /// species' entries are zero.
    pub fn species_rhs(&self, species: usize, u: &[f64]) -> Vec<f64> {
        let m = self.nodes();
        let mut out = vec![0.0; 2 * m];
        let r = species * m..(species + 1) * m;
        let d = if species == 0 { self.d_a } else { self.d_b };
        self.laplacian_into(&u[r.clone()], d, &mut out[r.clone()]);
        for i in 0..m {
            let (a, b) = (u[i], u[m + i]);
            let abb = a * b * b;
            out[r.start + i] += if species == 0 {
                -abb + self.feed * (1.0 - a)
            } else {
                abb - (self.feed + self.kill) * b
            };
        }
        out
    }

    fn laplacian_triplets(&self, d: f64, offset: usize, out: &mut Vec<(usize, usize, f64)>) {
        let n = self.n;
        let w = d * (n * n) as f64;
        for y in 0..n {
            for x in 0..n {
                let i = offset + y * n + x;
                out.push((i, i, -4.0 * w));
                out.push((i, offset + y * n + (x + 1) % n, w));
                out.push((i, offset + y * n + (x + n - 1) % n, w));
                out.push((i, offset + ((y + 1) % n) * n + x, w));
                out.push((i, offset + ((y + n - 1) % n) * n + x, w));
            }
        }
    }

    /// Entries of the reaction Jacobian, restricted to the requested
    /// (row species, column species) blocks.
    fn reaction_triplets(
        &self,
        u: &[f64],
        blocks: &[(usize, usize)],
        out: &mut Vec<(usize, usize, f64)>,
    ) {
        let m = self.nodes();
        for i in 0..m {
            let (a, b) = (u[i], u[m + i]);
            let entries = [
                ((0, 0), -b * b - self.feed),
                ((0, 1), -2.0 * a * b),
                ((1, 0), b * b),
                ((1, 1), 2.0 * a * b - (self.feed + self.kill)),
            ];
            for ((rs, cs), v) in entries {
                if blocks.contains(&(rs, cs)) {
                    out.push((rs * m + i, cs * m + i, v));
                }
            }
        }
    }

    /// Full analytic Jacobian of the right-hand side at `u`.
    pub fn jacobian(&self, u: &[f64]) -> Result<LinearOperator, ProblemError> {
        self.check_len(u)?;
        let mut t = Vec::with_capacity(6 * self.dim());
        self.laplacian_triplets(self.d_a, 0, &mut t);
        self.laplacian_triplets(self.d_b, self.nodes(), &mut t);
        self.reaction_triplets(u, &[(0, 0), (0, 1), (1, 0), (1, 1)], &mut t);
        Ok(LinearOperator::from_triplets(self.dim(), t)?)
    }

    /// Jacobian block of one species with respect to itself, of dimension n².
    pub fn species_block(&self, species: usize, u: &[f64]) -> Result<LinearOperator, ProblemError> {
        self.check_len(u)?;
        let m = self.nodes();
        let d = if species == 0 { self.d_a } else { self.d_b };
        let mut t = Vec::with_capacity(6 * m);
        self.laplacian_triplets(d, 0, &mut t);
        let mut diag = Vec::with_capacity(m);
        self.reaction_triplets(u, &[(species, species)], &mut diag);
        t.extend(
            diag.into_iter()
                .map(|(r, c, v)| (r - species * m, c - species * m, v)),
        );
        Ok(LinearOperator::from_triplets(m, t)?)
    }

    /// blockdiag(J_aa, J_bb): the Jacobian without cross-species coupling.
    pub fn block_jacobian(&self, u: &[f64]) -> Result<LinearOperator, ProblemError> {
        Ok(LinearOperator::block_diag(vec![
            Arc::new(self.species_block(0, u)?),
            Arc::new(self.species_block(1, u)?),
        ]))
    }

    /// blockdiag(d_a 𝕃, d_b 𝕃).
    pub fn diffusion_operator(&self) -> Result<LinearOperator, ProblemError> {
        let mut t = Vec::with_capacity(5 * self.dim());
        self.laplacian_triplets(self.d_a, 0, &mut t);
        self.laplacian_triplets(self.d_b, self.nodes(), &mut t);
        Ok(LinearOperator::from_triplets(self.dim(), t)?)
    }

    /// Jacobian of the reaction terms: four diagonal blocks.
    pub fn reaction_jacobian(&self, u: &[f64]) -> Result<LinearOperator, ProblemError> {
        self.check_len(u)?;
        let mut t = Vec::with_capacity(4 * self.nodes());
        self.reaction_triplets(u, &[(0, 0), (0, 1), (1, 0), (1, 1)], &mut t);
        Ok(LinearOperator::from_triplets(self.dim(), t)?)
    }

    /// Permutation ordering the state by subdomain (rows y < n/2 first), then
    /// by species. `perm[i]` is the original index at permuted position i.
    pub fn spatial_permutation(&self) -> Result<Vec<usize>, ProblemError> {
        if !self.n.is_multiple_of(2) {
            return Err(ProblemError::OddGrid(self.n));
        }
        let n = self.n;
        let m = self.nodes();
        let half = m / 2;
        let mut perm = Vec::with_capacity(2 * m);
        for rows in [0..half, half..m] {
            for species in 0..2 {
                perm.extend(rows.clone().map(|i| species * m + i));
            }
        }
        debug_assert_eq!(half, (n / 2) * n);
        Ok(perm)
    }
}

/// Initial state sampled at cell centers x = (i + 1/2)/n, y = (j + 1/2)/n:
/// a = 0.4 + 0.1(x + y) + 0.1 sin(10x) sin(20y),
/// b = 0.4 + 0.1(x + y) + 0.1 cos(10x) cos(20y).
pub fn gs_initial(m: &GrayScottModel) -> Vec<f64> {
    let n = m.n;
    let nodes = m.nodes();
    let mut u = vec![0.0; 2 * nodes];
    for j in 0..n {
        let y = (j as f64 + 0.5) / n as f64;
        for i in 0..n {
            let x = (i as f64 + 0.5) / n as f64;
            let base = 0.4 + 0.1 * (x + y);
            u[j * n + i] = base + 0.1 * (10.0 * x).sin() * (20.0 * y).sin();
            u[nodes + j * n + i] = base + 0.1 * (10.0 * x).cos() * (20.0 * y).cos();
        }
    }
    u
}

/// Full Gray–Scott right-hand side.
pub fn gs_rhs(m: &GrayScottModel, u: &[f64]) -> Result<Vec<f64>, ProblemError> {
    m.check_len(u)?;
    let mut out = m.diffusion(u);
    for (o, r) in out.iter_mut().zip(m.reaction(u)) {
        *o += r;
    }
    Ok(out)
}

fn checked(m: &GrayScottModel) -> Result<Arc<GrayScottModel>, ProblemError> {
    m.validate()?;
    Ok(Arc::new(m.clone()))
}

fn part(
    name: &str,
    rhs: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    operator: impl Fn(&[f64]) -> Arc<LinearOperator> + Send + Sync + 'static,
) -> Partition {
    Partition {
        name: name.into(),
        rhs: Arc::new(rhs),
        operator: Arc::new(operator),
    }
}

const BUILD: &str = "state length is fixed by the problem dimension";

/// Single-partition view with the full or species-block Jacobian.
pub fn gs_unsplit(m: &GrayScottModel, jacobian: JacobianKind) -> Result<SplitProblem, ProblemError> {
    let model = checked(m)?;
    let (fm, lm) = (model.clone(), model.clone());
    let op = move |u: &[f64]| -> Arc<LinearOperator> {
        Arc::new(match jacobian {
            JacobianKind::Full => lm.jacobian(u).expect(BUILD),
            JacobianKind::Block => lm.block_jacobian(u).expect(BUILD),
        })
    };
    Ok(SplitProblem {
        name: format!("gray-scott-{}", m.n),
        dim: m.dim(),
        parts: vec![part("full", move |u| gs_rhs(&fm, u).expect(BUILD), op)],
    })
}

/// One partition per species, each operator embedded block-diagonally with a
/// zero block for the other species.
pub fn gs_partition_species(m: &GrayScottModel) -> Result<SplitProblem, ProblemError> {
    let model = checked(m)?;
    let nodes = m.nodes();
    let mut parts = Vec::new();
    for (species, name) in [(0, "a"), (1, "b")] {
        let (fm, lm) = (model.clone(), model.clone());
        parts.push(part(
            name,
            move |u| fm.species_rhs(species, u),
            move |u| {
                let block = Arc::new(lm.species_block(species, u).expect(BUILD));
                let zero = Arc::new(LinearOperator::zero(nodes));
                Arc::new(LinearOperator::block_diag(if species == 0 {
                    vec![block, zero]
                } else {
                    vec![zero, block]
                }))
            },
        ));
    }
    Ok(SplitProblem {
        name: format!("gray-scott-{}-species", m.n),
        dim: m.dim(),
        parts,
    })
}

/// Lower (y < 1/2) and upper half of the domain. f^p is the full
/// right-hand side restricted to the rows of subdomain p; L^p is the
/// matching principal sub-block of the permuted Jacobian, embedded in the
/// full space.
pub fn gs_partition_space(m: &GrayScottModel) -> Result<SplitProblem, ProblemError> {
    let model = checked(m)?;
    let perm = Arc::new(m.spatial_permutation()?);
    let dim = m.dim();
    let half = dim / 2;
    let mut parts = Vec::new();
    for (p, name) in [(0, "lower"), (1, "upper")] {
        let range = p * half..(p + 1) * half;
        let (fm, lm) = (model.clone(), model.clone());
        let (fperm, lperm) = (perm.clone(), perm.clone());
        let frange = range.clone();
        parts.push(part(
            name,
            move |u| {
                let full = gs_rhs(&fm, u).expect(BUILD);
                let mut out = vec![0.0; full.len()];
                for &i in &fperm[frange.clone()] {
                    out[i] = full[i];
                }
                out
            },
            move |u| {
                let j = Arc::new(lm.jacobian(u).expect(BUILD));
                Arc::new(
                    LinearOperator::embedded_subblock(j, lperm.to_vec(), range.clone())
                        .expect(BUILD),
                )
            },
        ));
    }
    Ok(SplitProblem {
        name: format!("gray-scott-{}-space", m.n),
        dim,
        parts,
    })
}

fn physics_like(m: &GrayScottModel, explicit_reaction: bool) -> Result<SplitProblem, ProblemError> {
    let model = checked(m)?;
    let diffusion = Arc::new(m.diffusion_operator()?);
    let (f1, f2, l2) = (model.clone(), model.clone(), model.clone());
    let nodes = m.dim();
    let parts = vec![
        part("diffusion", move |u| f1.diffusion(u), move |_| diffusion.clone()),
        part(
            "reaction",
            move |u| f2.reaction(u),
            move |u| {
                Arc::new(if explicit_reaction {
                    LinearOperator::zero(nodes)
                } else {
                    l2.reaction_jacobian(u).expect(BUILD)
                })
            },
        ),
    ];
    let suffix = if explicit_reaction { "imex" } else { "physics" };
    Ok(SplitProblem {
        name: format!("gray-scott-{}-{suffix}", m.n),
        dim: m.dim(),
        parts,
    })
}

/// Diffusion and reaction as separate partitions with their exact
/// Jacobians.
pub fn gs_partition_physics(m: &GrayScottModel) -> Result<SplitProblem, ProblemError> {
    physics_like(m, false)
}

/// Same parts as [`gs_partition_physics`], reaction operator set to zero.
pub fn gs_partition_imex(m: &GrayScottModel) -> Result<SplitProblem, ProblemError> {
    physics_like(m, true)
}

/// The problem for a partitioning; `jacobian` only matters for
/// [`Partitioning::None`].
pub fn gs_problem(
    m: &GrayScottModel,
    partitioning: Partitioning,
    jacobian: JacobianKind,
) -> Result<SplitProblem, ProblemError> {
    match partitioning {
        Partitioning::None => gs_unsplit(m, jacobian),
        Partitioning::Species => gs_partition_species(m),
        Partitioning::Space => gs_partition_space(m),
        Partitioning::Physics => gs_partition_physics(m),
        Partitioning::Imex => gs_partition_imex(m),
    }
}

/// u' = Lu + ε sin(u) with a random stable dense L.
#[derive(Debug, Clone)]
pub struct OracleSemilinear {
    pub l: DenseMatrix,
    pub epsilon: f64,
    pub u0: Vec<f64>,
}

/// Random oracle problem: entries of L uniform in [-1, 1], shifted left by
/// its 1-norm plus one so every eigenvalue has real part ≤ -1; ε = 0.1.
pub fn oracle_semilinear(dim: usize, seed: u64) -> OracleSemilinear {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l = DenseMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..=1.0));
    let shift = l.norm_one() + 1.0;
    for i in 0..dim {
        l[(i, i)] -= shift;
    }
    let u0 = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
    OracleSemilinear {
        l,
        epsilon: 0.1,
        u0,
    }
}

impl OracleSemilinear {
    pub fn dim(&self) -> usize {
        self.u0.len()
    }

    pub fn rhs(&self, u: &[f64]) -> Vec<f64> {
        let mut out = self.l.mul_vec(u);
        for (o, x) in out.iter_mut().zip(u) {
            *o += self.epsilon * x.sin();
        }
        out
    }

    fn with_operator(&self, op: Arc<LinearOperator>, name: &str) -> SplitProblem {
        let this = Arc::new(self.clone());
        SplitProblem {
            name: name.into(),
            dim: self.dim(),
            parts: vec![part("full", move |u| this.rhs(u), move |_| op.clone())],
        }
    }

    /// Single partition with the linear part L as operator.
    pub fn problem(&self) -> SplitProblem {
        let op = Arc::new(LinearOperator::dense(self.l.clone()).expect("L is square"));
        self.with_operator(op, "oracle-semilinear")
    }

    /// Single partition with a zero operator.
    pub fn explicit_problem(&self) -> SplitProblem {
        self.with_operator(Arc::new(LinearOperator::zero(self.dim())), "oracle-explicit")
    }

    /// Solution at time t by classical RK4 with step h ≤ 1/(1000·(‖L‖₁ + ε)).
    pub fn reference(&self, t: f64) -> Vec<f64> {
        let rate = self.l.norm_one() + self.epsilon;
        let steps = ((t.abs() * rate * 1000.0).ceil() as usize).max(1);
        let h = t / steps as f64;
        let mut u = self.u0.clone();
        let shifted = |u: &[f64], k: &[f64], s: f64| -> Vec<f64> {
            u.iter().zip(k).map(|(x, y)| x + s * y).collect()
        };
        for _ in 0..steps {
            let k1 = self.rhs(&u);
            let k2 = self.rhs(&shifted(&u, &k1, h / 2.0));
            let k3 = self.rhs(&shifted(&u, &k2, h / 2.0));
            let k4 = self.rhs(&shifted(&u, &k3, h));
            for i in 0..u.len() {
                u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_state(m: &GrayScottModel, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m.dim()).map(|_| rng.random_range(0.1..0.9)).collect()
    }

    fn fd_jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, u: &[f64]) -> DenseMatrix {
        let n = u.len();
        let mut j = DenseMatrix::zeros(n, n);
        let eps = 1e-6;
        for c in 0..n {
            let mut up = u.to_vec();
            let mut dn = u.to_vec();
            up[c] += eps;
            dn[c] -= eps;
            let (fu, fd) = (f(&up), f(&dn));
            for r in 0..n {
                j[(r, c)] = (fu[r] - fd[r]) / (2.0 * eps);
            }
        }
        j
    }

    fn max_rel_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        (a - b).max_abs() / b.max_abs().max(1.0)
    }

    #[test]
    fn default_parameters() {
        let m = gs_default(64);
        assert_eq!((m.feed, m.kill, m.d_a, m.d_b), (0.04, 0.06, 2.0, 1.0));
        assert_eq!(m.dim(), 2 * 64 * 64);
        assert!(m.validate().is_ok());
        assert!(gs_default(2).validate().is_err());
    }

    #[test]
    fn initial_state_range() {
        let m = gs_default(64);
        let u = gs_initial(&m);
        assert!(u.iter().all(|x| x.is_finite() && *x > 0.0 && *x <= 0.7));
        // first cell center (1/128, 1/128)
        let c: f64 = 0.5 / 64.0;
        let want = 0.4 + 0.2 * c + 0.1 * (10.0 * c).sin() * (20.0 * c).sin();
        assert!((u[0] - want).abs() < 1e-15);
    }

    #[test]
    fn constant_state_is_pure_reaction() {
        let m = gs_default(8);
        let mut u = vec![0.3; m.dim()];
        u[m.nodes()..].fill(0.2);
        let f = gs_rhs(&m, &u).unwrap();
        let ra = -0.3 * 0.04 + 0.04 * 0.7;
        let rb = 0.3 * 0.04 - 0.1 * 0.2;
        for i in 0..m.nodes() {
            assert!((f[i] - ra).abs() < 1e-12);
            assert!((f[m.nodes() + i] - rb).abs() < 1e-12);
        }
        let mut eq = vec![1.0; m.dim()];
        eq[m.nodes()..].fill(0.0);
        assert!(gs_rhs(&m, &eq).unwrap().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn rhs_rejects_wrong_length() {
        assert!(gs_rhs(&gs_default(8), &[0.0; 3]).is_err());
    }

    #[test]
    fn full_jacobian_matches_finite_differences() {
        let m = gs_default(8);
        let u = random_state(&m, 1);
        let fd = fd_jacobian(&|x| gs_rhs(&m, x).unwrap(), &u);
        let j = m.jacobian(&u).unwrap().to_dense();
        assert!(max_rel_diff(&j, &fd) < 1e-6);
    }

    #[test]
    fn partitions_sum_to_full_rhs() {
        let m = gs_default(8);
        for p in Partitioning::SPLITS {
            let prob = gs_problem(&m, p, JacobianKind::Full).unwrap();
            assert_eq!(prob.num_parts(), 2);
            for seed in 0..5 {
                let u = random_state(&m, seed);
                let full = gs_rhs(&m, &u).unwrap();
                let sum = prob.rhs_full(&u);
                let scale = full.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                for (a, b) in sum.iter().zip(&full) {
                    assert!((a - b).abs() <= 1e-13 * scale, "{}", p.name());
                }
            }
        }
    }

    #[test]
    fn species_operators_are_jacobian_diagonal_blocks() {
        let m = gs_default(8);
        let u = random_state(&m, 2);
        let prob = gs_partition_species(&m).unwrap();
        let ops = prob.operators(&u);
        let sum = &ops[0].to_dense() + &ops[1].to_dense();
        let fd = fd_jacobian(&|x| gs_rhs(&m, x).unwrap(), &u);
        let nodes = m.nodes();
        let block_fd = DenseMatrix::from_fn(m.dim(), m.dim(), |r, c| {
            if (r < nodes) == (c < nodes) {
                fd[(r, c)]
            } else {
                0.0
            }
        });
        assert!(max_rel_diff(&sum, &block_fd) < 1e-6);
        let mut v = vec![0.0; m.dim()];
        v[nodes..].fill(1.0);
        assert!(ops[0].apply(&v).unwrap().iter().all(|x| *x == 0.0));
        assert!(max_rel_diff(&m.block_jacobian(&u).unwrap().to_dense(), &block_fd) < 1e-6);
    }

    #[test]
    fn physics_operators() {
        let m = gs_default(8);
        let prob = gs_partition_physics(&m).unwrap();
        let (u1, u2) = (random_state(&m, 3), random_state(&m, 4));
        assert_eq!(
            prob.operators(&u1)[0].to_dense(),
            prob.operators(&u2)[0].to_dense()
        );
        let fd = fd_jacobian(&|x| m.reaction(x), &u1);
        assert!(max_rel_diff(&prob.operators(&u1)[1].to_dense(), &fd) < 1e-6);
        let imex = gs_partition_imex(&m).unwrap();
        assert!(imex.operators(&u1)[1].is_zero());
        assert_eq!(imex.rhs_part(1, &u1), prob.rhs_part(1, &u1));
    }

    #[test]
    fn space_split_structure() {
        let m = gs_default(8);
        let perm = m.spatial_permutation().unwrap();
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..m.dim()).collect::<Vec<_>>());
        assert!(matches!(
            gs_default(7).spatial_permutation(),
            Err(ProblemError::OddGrid(7))
        ));

        let u = random_state(&m, 5);
        let j = m.jacobian(&u).unwrap().to_dense();
        let ptjp = DenseMatrix::from_fn(m.dim(), m.dim(), |r, c| j[(perm[r], perm[c])]);
        let half = m.dim() / 2;
        let prob = gs_partition_space(&m).unwrap();
        let ops = prob.operators(&u);
        for (p, op) in ops.iter().enumerate() {
            let dense = op.to_dense();
            let r = p * half..(p + 1) * half;
            for (a, &ra) in perm.iter().enumerate() {
                for (b, &cb) in perm.iter().enumerate() {
                    let want = if r.contains(&a) && r.contains(&b) {
                        ptjp[(a, b)]
                    } else {
                        0.0
                    };
                    assert_eq!(dense[(ra, cb)], want);
                }
            }
        }
    }

    #[test]
    fn oracle_is_stable_and_reference_is_exact_for_linear_case() {
        let mut o = oracle_semilinear(6, 7);
        o.epsilon = 0.0;
        let t = 0.5;
        let want = crate::phi::expm_dense(&o.l.scaled(t)).unwrap().mul_vec(&o.u0);
        let got = o.reference(t);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_scalar_travel_time() {
        // For a scalar autonomous ODE, t = ∫_{u0}^{u(t)} du / f(u).
        let o = oracle_semilinear(1, 3);
        let t = 0.3;
        let (a, b) = (o.u0[0], o.reference(t)[0]);
        let f = |u: f64| o.l[(0, 0)] * u + o.epsilon * u.sin();
        let n = 20_000;
        let w = (b - a) / n as f64;
        let mut sum = 1.0 / f(a) + 1.0 / f(b);
        for i in 1..n {
            sum += (if i % 2 == 1 { 4.0 } else { 2.0 }) / f(a + i as f64 * w);
        }
        assert!((sum * w / 3.0 - t).abs() < 1e-10);
    }
}
