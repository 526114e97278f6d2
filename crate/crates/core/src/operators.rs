//! Matrix-free linear operators.
//!
//! A [`LinearOperator`] knows its dimension and how to apply itself to a
//! vector. Compositions hold their children behind `Arc`, so partition
//! builders can share large pieces (the Laplacian, a Jacobian) freely.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra_sparse::{CooMatrix, CsrMatrix};
use thiserror::Error;

use crate::phi::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OperatorError {
    #[error("dimension mismatch: operator expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("grid side must be at least 3, got {0}")]
    InvalidGrid(usize),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("range {start}..{end} is out of bounds for dimension {dim}")]
    InvalidRange { start: usize, end: usize, dim: usize },
    #[error("sparse entry ({row}, {col}) is outside a {dim}x{dim} matrix")]
    EntryOutOfBounds { row: usize, col: usize, dim: usize },
}

/// Concrete representation of an operator.
#[derive(Debug)]
pub enum OperatorKind {
    Dense(DenseMatrix),
    /// Square sparse matrix in compressed-row form (stencils, Jacobians).
    Sparse(CsrMatrix<f64>),
    Diagonal(Vec<f64>),
    BlockDiag(Vec<Arc<LinearOperator>>),
    /// Principal sub-block `(PᵀJP)[range, range]` of a permuted operator.
    ///
    /// With `embedded` set, the operator acts on the full space: inputs are
    /// restricted to the permuted range, outputs are zero outside it.
    PermutedSubBlock {
        inner: Arc<LinearOperator>,
        perm: Vec<usize>,
        range: Range<usize>,
        embedded: bool,
    },
    Zero,
    Sum(Vec<Arc<LinearOperator>>),
    Scaled(f64, Arc<LinearOperator>),
}

#[derive(Debug)]
pub struct LinearOperator {
    dim: usize,
    kind: OperatorKind,
    matvecs: AtomicUsize,
}

impl LinearOperator {
    fn new(dim: usize, kind: OperatorKind) -> Self {
        Self {
            dim,
            kind,
            matvecs: AtomicUsize::new(0),
        }
    }

    pub fn dense(m: DenseMatrix) -> Result<Self, OperatorError> {
        if !m.is_square() {
            return Err(OperatorError::DimensionMismatch {
                expected: m.rows(),
                got: m.cols(),
            });
        }
        Ok(Self::new(m.rows(), OperatorKind::Dense(m)))
    }

    pub fn sparse(m: CsrMatrix<f64>) -> Result<Self, OperatorError> {
        if m.nrows() != m.ncols() {
            return Err(OperatorError::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        Ok(Self::new(m.nrows(), OperatorKind::Sparse(m)))
    }

    /// Sparse operator from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        dim: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, OperatorError> {
        let mut coo = CooMatrix::new(dim, dim);
        for (row, col, value) in triplets {
            if row >= dim || col >= dim {
                return Err(OperatorError::EntryOutOfBounds { row, col, dim });
            }
            coo.push(row, col, value);
        }
        Self::sparse(CsrMatrix::from(&coo))
    }

    pub fn diagonal(d: Vec<f64>) -> Self {
        Self::new(d.len(), OperatorKind::Diagonal(d))
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(vec![1.0; dim])
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, OperatorKind::Zero)
    }

    pub fn block_diag(blocks: Vec<Arc<LinearOperator>>) -> Self {
        let dim = blocks.iter().map(|b| b.dim).sum();
        Self::new(dim, OperatorKind::BlockDiag(blocks))
    }

    pub fn sum(terms: Vec<Arc<LinearOperator>>) -> Result<Self, OperatorError> {
        let dim = terms.first().map_or(0, |t| t.dim);
        if let Some(bad) = terms.iter().find(|t| t.dim != dim) {
            return Err(OperatorError::DimensionMismatch {
                expected: dim,
                got: bad.dim,
            });
        }
        Ok(Self::new(dim, OperatorKind::Sum(terms)))
    }

    pub fn scaled(r: f64, op: Arc<LinearOperator>) -> Self {
        Self::new(op.dim, OperatorKind::Scaled(r, op))
    }

    /// The principal sub-block `(PᵀJP)[range, range]`, of dimension
    /// `range.len()`.
    ///
    /// `perm[i]` is the original index placed at position `i` of the
    /// permuted ordering.
    pub fn permuted_subblock(
        inner: Arc<LinearOperator>,
        perm: Vec<usize>,
        range: Range<usize>,
    ) -> Result<Self, OperatorError> {
        validate_permutation(&perm, inner.dim)?;
        validate_range(&range, inner.dim)?;
        Ok(Self::new(
            range.len(),
            OperatorKind::PermutedSubBlock {
                inner,
                perm,
                range,
                embedded: false,
            },
        ))
    }

    /// Same sub-block as [`Self::permuted_subblock`], embedded back into the
    /// original full-space ordering (zero rows and columns elsewhere).
    pub fn embedded_subblock(
        inner: Arc<LinearOperator>,
        perm: Vec<usize>,
        range: Range<usize>,
    ) -> Result<Self, OperatorError> {
        validate_permutation(&perm, inner.dim)?;
        validate_range(&range, inner.dim)?;
        Ok(Self::new(
            inner.dim,
            OperatorKind::PermutedSubBlock {
                inner,
                perm,
                range,
                embedded: true,
            },
        ))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    /// Number of top-level `apply` calls made on this operator.
    pub fn matvecs(&self) -> usize {
        self.matvecs.load(Ordering::Relaxed)
    }

    pub fn reset_matvecs(&self) {
        self.matvecs.store(0, Ordering::Relaxed);
    }

    /// True when the operator is structurally zero.
    pub fn is_zero(&self) -> bool {
        match &self.kind {
            OperatorKind::Zero => true,
            OperatorKind::Scaled(r, op) => *r == 0.0 || op.is_zero(),
            OperatorKind::Sum(terms) => terms.iter().all(|t| t.is_zero()),
            OperatorKind::BlockDiag(blocks) => blocks.iter().all(|b| b.is_zero()),
            OperatorKind::PermutedSubBlock { inner, range, .. } => {
                range.is_empty() || inner.is_zero()
            }
            OperatorKind::Diagonal(d) => d.iter().all(|&x| x == 0.0),
            OperatorKind::Dense(_) | OperatorKind::Sparse(_) => false,
        }
    }

    /// Returns `op · v` and counts one matvec.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, OperatorError> {
        let mut out = vec![0.0; self.dim];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    /// Writes `op · v` into `out` and counts one matvec.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) -> Result<(), OperatorError> {
        self.check_len(v.len())?;
        self.check_len(out.len())?;
        self.matvecs.fetch_add(1, Ordering::Relaxed);
        self.apply_uncounted(v, out);
        Ok(())
    }

    fn check_len(&self, got: usize) -> Result<(), OperatorError> {
        if got == self.dim {
            Ok(())
        } else {
            Err(OperatorError::DimensionMismatch {
                expected: self.dim,
                got,
            })
        }
    }

    fn apply_uncounted(&self, v: &[f64], out: &mut [f64]) {
        match &self.kind {
            OperatorKind::Dense(m) => out.copy_from_slice(&m.mul_vec(v)),
            OperatorKind::Sparse(m) => {
                let offsets = m.row_offsets();
                let cols = m.col_indices();
                let vals = m.values();
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for idx in offsets[i]..offsets[i + 1] {
                        acc += vals[idx] * v[cols[idx]];
                    }
                    *o = acc;
                }
            }
            OperatorKind::Diagonal(d) => {
                for ((o, &di), &vi) in out.iter_mut().zip(d).zip(v) {
                    *o = di * vi;
                }
            }
            OperatorKind::BlockDiag(blocks) => {
                let mut offset = 0;
                for b in blocks {
                    let r = offset..offset + b.dim;
                    b.apply_uncounted(&v[r.clone()], &mut out[r]);
                    offset += b.dim;
                }
            }
            OperatorKind::PermutedSubBlock {
                inner,
                perm,
                range,
                embedded,
            } => {
                let mut full = vec![0.0; inner.dim];
                for (local, &orig) in perm[range.clone()].iter().enumerate() {
                    full[orig] = if *embedded { v[orig] } else { v[local] };
                }
                let mut image = vec![0.0; inner.dim];
                inner.apply_uncounted(&full, &mut image);
                if *embedded {
                    out.fill(0.0);
                }
                for (local, &orig) in perm[range.clone()].iter().enumerate() {
                    if *embedded {
                        out[orig] = image[orig];
                    } else {
                        out[local] = image[orig];
                    }
                }
            }
            OperatorKind::Zero => out.fill(0.0),
            OperatorKind::Sum(terms) => {
                out.fill(0.0);
                let mut scratch = vec![0.0; self.dim];
                for t in terms {
                    t.apply_uncounted(v, &mut scratch);
                    for (o, s) in out.iter_mut().zip(&scratch) {
                        *o += s;
                    }
                }
            }
            OperatorKind::Scaled(r, op) => {
                op.apply_uncounted(v, out);
                for o in out.iter_mut() {
                    *o *= r;
                }
            }
        }
    }

    /// Materializes the operator column by column. Does not touch the
    /// matvec counter.
    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.dim;
        let mut m = DenseMatrix::zeros(n, n);
        let mut unit = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            unit[j] = 1.0;
            self.apply_uncounted(&unit, &mut col);
            for i in 0..n {
                m[(i, j)] = col[i];
            }
            unit[j] = 0.0;
        }
        m
    }
}

fn validate_permutation(perm: &[usize], dim: usize) -> Result<(), OperatorError> {
    if perm.len() != dim {
        return Err(OperatorError::InvalidPermutation(format!(
            "length {} does not match dimension {dim}",
            perm.len()
        )));
    }
    let mut seen = vec![false; dim];
    for &p in perm {
        if p >= dim || seen[p] {
            return Err(OperatorError::InvalidPermutation(format!(
                "index {p} is out of range or repeated"
            )));
        }
        seen[p] = true;
    }
    Ok(())
}

fn validate_range(range: &Range<usize>, dim: usize) -> Result<(), OperatorError> {
    if range.start > range.end || range.end > dim {
        return Err(OperatorError::InvalidRange {
            start: range.start,
            end: range.end,
            dim,
        });
    }
    Ok(())
}

/// Five-point Laplacian on an n×n periodic grid over the unit square,
/// spacing Δ = 1/n, scaled by d/Δ². Node (row y, column x) has index y·n + x.
pub fn laplacian_2d_periodic(n: usize, d: f64) -> Result<LinearOperator, OperatorError> {
    if n < 3 {
        return Err(OperatorError::InvalidGrid(n));
    }
    let w = d * (n * n) as f64;
    let mut triplets = Vec::with_capacity(5 * n * n);
    for y in 0..n {
        for x in 0..n {
            let i = y * n + x;
            triplets.push((i, i, -4.0 * w));
            triplets.push((i, y * n + (x + 1) % n, w));
            triplets.push((i, y * n + (x + n - 1) % n, w));
            triplets.push((i, ((y + 1) % n) * n + x, w));
            triplets.push((i, ((y + n - 1) % n) * n + x, w));
        }
    }
    LinearOperator::from_triplets(n * n, triplets)
}
