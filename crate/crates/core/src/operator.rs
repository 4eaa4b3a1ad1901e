//! Matrix-free symmetric operators.
//!
//! Every solver in this crate touches `A` and `B` only through [`SymOperator::apply`].
//! Dense and sparse explicit matrices implement the trait directly; covariance
//! operators built from data (`XᵀX/n + γI`) apply `X` and `Xᵀ` in sequence and never
//! form the `d × d` product. Operators that are an average of per-sample terms also
//! expose that structure through [`FiniteSum`] so stochastic solvers can sample it.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dims, Error, Result};

/// A symmetric linear map on `R^d`.
pub trait SymOperator: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Applies the operator to every column of `x` (`d × k`).
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64>;

    /// Stored nonzeros, used for cost accounting.
    fn nnz(&self) -> usize;

    /// Explicit dense form, when the operator can produce one without probing.
    fn to_dense(&self) -> Option<DMatrix<f64>> {
        None
    }

    /// Per-sample decomposition, when the operator is an average over samples.
    fn finite_sum(&self) -> Option<&FiniteSum> {
        None
    }

    fn apply_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        DVector::from_column_slice(self.apply(&m).as_slice())
    }
}

/// Dense form of `op`: its own explicit form when it has one, otherwise the
/// result of applying it to the identity.
pub fn materialize(op: &dyn SymOperator, cap: usize) -> Result<DMatrix<f64>> {
    if let Some(m) = op.to_dense() {
        return Ok(m);
    }
    let d = op.dim();
    if d > cap {
        return Err(Error::Capacity { dim: d, cap });
    }
    Ok(op.apply(&DMatrix::identity(d, d)))
}

#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "operator must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let scale = matrix.amax().max(1.0);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::Contract(format!("operator is not symmetric (max |M - Mᵀ| = {asym:e})")));
        }
        Ok(Self { matrix })
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self { matrix: DMatrix::from_diagonal(&DVector::from_column_slice(diag)) }
    }

    pub fn identity(d: usize) -> Self {
        Self { matrix: DMatrix::identity(d, d) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl SymOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.matrix * x
    }

    fn nnz(&self) -> usize {
        self.matrix.iter().filter(|v| **v != 0.0).count()
    }

    fn to_dense(&self) -> Option<DMatrix<f64>> {
        Some(self.matrix.clone())
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= nrows || c >= ncols {
                return Err(Error::DimensionMismatch(format!("entry ({r}, {c}) outside {nrows}x{ncols}")));
            }
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self { nrows, ncols, indptr, indices, values })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut triplets = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    triplets.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &triplets).expect("indices come from the matrix shape")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    /// `self * x`
    pub fn mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, x.ncols());
        for k in 0..x.ncols() {
            let xc = x.column(k);
            for r in 0..self.nrows {
                out[(r, k)] = self.row(r).map(|(c, v)| v * xc[c]).sum();
            }
        }
        out
    }

    /// `selfᵀ * x`
    pub fn tr_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.ncols, x.ncols());
        for k in 0..x.ncols() {
            for r in 0..self.nrows {
                let xr = x[(r, k)];
                if xr == 0.0 {
                    continue;
                }
                for (c, v) in self.row(r) {
                    out[(c, k)] += v * xr;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols && {
            let d = self.to_dense_if_small();
            match d {
                Some(m) => (&m - m.transpose()).amax() <= tol * m.amax().max(1.0),
                None => {
                    let mut t: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
                    let mut s: Vec<_> = self.triplets().collect();
                    t.sort_by_key(|&(r, c, _)| (r, c));
                    s.sort_by_key(|&(r, c, _)| (r, c));
                    s.len() == t.len()
                        && s.iter().zip(&t).all(|(a, b)| a.0 == b.0 && a.1 == b.1 && (a.2 - b.2).abs() <= tol)
                }
            }
        }
    }

    fn to_dense_if_small(&self) -> Option<DMatrix<f64>> {
        (self.nrows * self.ncols <= 4_000_000).then(|| self.to_dense())
    }
}

/// Symmetric operator backed by a sparse matrix.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    matrix: CsrMatrix,
}

impl SparseOperator {
    pub fn new(matrix: CsrMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "operator must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if !matrix.is_symmetric(1e-10) {
            return Err(Error::Contract("sparse operator is not symmetric".into()));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }
}

impl SymOperator for SparseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.matrix.mul(x)
    }

    fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    fn to_dense(&self) -> Option<DMatrix<f64>> {
        self.matrix.to_dense_if_small()
    }
}

/// An `n × d` data matrix whose rows are samples.
#[derive(Debug, Clone)]
pub enum DataMatrix {
    /// Stored transposed (`d × n`) so that each sample is a contiguous column.
    Dense {
        samples: DMatrix<f64>,
    },
    Sparse(CsrMatrix),
}

impl DataMatrix {
    pub fn dense(x: &DMatrix<f64>) -> Self {
        DataMatrix::Dense { samples: x.transpose() }
    }

    pub fn sparse(x: CsrMatrix) -> Self {
        DataMatrix::Sparse(x)
    }

    pub fn n_samples(&self) -> usize {
        match self {
            DataMatrix::Dense { samples } => samples.ncols(),
            DataMatrix::Sparse(m) => m.nrows(),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            DataMatrix::Dense { samples } => samples.nrows(),
            DataMatrix::Sparse(m) => m.ncols(),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            DataMatrix::Dense { samples } => samples.iter().filter(|v| **v != 0.0).count(),
            DataMatrix::Sparse(m) => m.nnz(),
        }
    }

    /// `X v` for `v` of shape `d × k`.
    pub fn mul(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            DataMatrix::Dense { samples } => samples.tr_mul(v),
            DataMatrix::Sparse(m) => m.mul(v),
        }
    }

    /// `Xᵀ u` for `u` of shape `n × k`.
    pub fn tr_mul(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            DataMatrix::Dense { samples } => samples * u,
            DataMatrix::Sparse(m) => m.tr_mul(u),
        }
    }

    pub fn row_sq_norm(&self, i: usize) -> f64 {
        match self {
            DataMatrix::Dense { samples } => samples.column(i).norm_squared(),
            DataMatrix::Sparse(m) => m.row(i).map(|(_, v)| v * v).sum(),
        }
    }

    pub fn max_row_sq_norm(&self) -> f64 {
        (0..self.n_samples()).map(|i| self.row_sq_norm(i)).fold(0.0, f64::max)
    }

    /// `out[c] = x_iᵀ w[offset.., c]`
    pub fn row_dot(&self, i: usize, w: &DMatrix<f64>, offset: usize, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let col = w.column(c);
            *o = match self {
                DataMatrix::Dense { samples } => {
                    samples.column(i).iter().enumerate().map(|(j, x)| x * col[offset + j]).sum()
                }
                DataMatrix::Sparse(m) => m.row(i).map(|(j, x)| x * col[offset + j]).sum(),
            };
        }
    }

    /// `w[offset.., c] += scale * x_i * coef[c]`
    pub fn row_axpy(&self, i: usize, coef: &[f64], scale: f64, w: &mut DMatrix<f64>, offset: usize) {
        for (c, &a) in coef.iter().enumerate() {
            let s = scale * a;
            if s == 0.0 {
                continue;
            }
            let mut col = w.column_mut(c);
            match self {
                DataMatrix::Dense { samples } => {
                    for (j, x) in samples.column(i).iter().enumerate() {
                        col[offset + j] += s * x;
                    }
                }
                DataMatrix::Sparse(m) => {
                    for (j, x) in m.row(i) {
                        col[offset + j] += s * x;
                    }
                }
            }
        }
    }

    /// The `n × d` matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            DataMatrix::Dense { samples } => samples.transpose(),
            DataMatrix::Sparse(m) => m.to_dense(),
        }
    }
}

/// One block of a finite-sum operator: rows of `data` act on coordinates
/// `offset .. offset + data.n_features()`.
#[derive(Debug, Clone)]
pub struct FiniteBlock {
    pub data: Arc<DataMatrix>,
    pub ridge: f64,
    pub offset: usize,
}

/// `B = (1/n) Σ_i H_i` where every `H_i` is block diagonal with blocks
/// `x_ij x_ijᵀ + γ_j I`.
#[derive(Debug, Clone)]
pub struct FiniteSum {
    blocks: Vec<FiniteBlock>,
    n: usize,
    dim: usize,
}

impl FiniteSum {
    pub fn new(blocks: Vec<FiniteBlock>) -> Result<Self> {
        let first = blocks.first().ok_or_else(|| Error::Config("finite sum needs at least one block".into()))?;
        let n = first.data.n_samples();
        let mut dim = 0;
        for b in &blocks {
            check_dims("finite-sum sample count", n, b.data.n_samples())?;
            check_dims("finite-sum block offset", dim, b.offset)?;
            if b.ridge < 0.0 {
                return Err(Error::Config(format!("ridge must be nonnegative, got {}", b.ridge)));
            }
            dim += b.data.n_features();
        }
        if n == 0 {
            return Err(Error::Config("finite sum has no samples".into()));
        }
        Ok(Self { blocks, n, dim })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[FiniteBlock] {
        &self.blocks
    }

    /// `max_i max_j ‖x_ij‖²`, the component smoothness constant without ridge.
    pub fn max_row_sq_norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.data.max_row_sq_norm()).fold(0.0, f64::max)
    }
}

/// `XᵀX/n + γI`, applied as `Xᵀ(Xv)/n + γv`.
#[derive(Debug, Clone)]
pub struct GramOperator {
    sum: FiniteSum,
}

impl GramOperator {
    pub fn new(data: Arc<DataMatrix>, ridge: f64) -> Result<Self> {
        let sum = FiniteSum::new(vec![FiniteBlock { data, ridge, offset: 0 }])?;
        Ok(Self { sum })
    }

    pub fn data(&self) -> &DataMatrix {
        &self.sum.blocks[0].data
    }

    pub fn ridge(&self) -> f64 {
        self.sum.blocks[0].ridge
    }
}

impl SymOperator for GramOperator {
    fn dim(&self) -> usize {
        self.sum.dim
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let data = self.data();
        let mut y = data.tr_mul(&data.mul(x));
        y /= self.sum.n as f64;
        y + x * self.ridge()
    }

    fn nnz(&self) -> usize {
        self.data().nnz()
    }

    fn to_dense(&self) -> Option<DMatrix<f64>> {
        let x = self.data().to_dense();
        let d = self.dim();
        Some(x.tr_mul(&x) / self.sum.n as f64 + DMatrix::identity(d, d) * self.ridge())
    }

    fn finite_sum(&self) -> Option<&FiniteSum> {
        Some(&self.sum)
    }
}

/// `blockdiag(B_1, …, B_m)`.
#[derive(Debug, Clone)]
pub struct BlockDiagOperator {
    blocks: Vec<Arc<dyn SymOperator>>,
    offsets: Vec<usize>,
    dim: usize,
    sum: Option<FiniteSum>,
}

impl BlockDiagOperator {
    pub fn new(blocks: Vec<Arc<dyn SymOperator>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Config("block-diagonal operator needs at least one block".into()));
        }
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut dim = 0;
        for b in &blocks {
            offsets.push(dim);
            dim += b.dim();
        }
        let sum = Self::compose_sums(&blocks, &offsets);
        Ok(Self { blocks, offsets, dim, sum })
    }

    fn compose_sums(blocks: &[Arc<dyn SymOperator>], offsets: &[usize]) -> Option<FiniteSum> {
        let mut parts = Vec::new();
        for (b, &off) in blocks.iter().zip(offsets) {
            for fb in b.finite_sum()?.blocks() {
                parts.push(FiniteBlock { data: fb.data.clone(), ridge: fb.ridge, offset: off + fb.offset });
            }
        }
        FiniteSum::new(parts).ok()
    }

    pub fn blocks(&self) -> &[Arc<dyn SymOperator>] {
        &self.blocks
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }
}

impl SymOperator for BlockDiagOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.dim, x.ncols());
        for (b, &off) in self.blocks.iter().zip(&self.offsets) {
            let part = b.apply(&x.rows(off, b.dim()).into_owned());
            y.rows_mut(off, b.dim()).copy_from(&part);
        }
        y
    }

    fn nnz(&self) -> usize {
        self.blocks.iter().map(|b| b.nnz()).sum()
    }

    fn to_dense(&self) -> Option<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (b, &off) in self.blocks.iter().zip(&self.offsets) {
            m.view_mut((off, off), (b.dim(), b.dim())).copy_from(&b.to_dense()?);
        }
        Some(m)
    }

    fn finite_sum(&self) -> Option<&FiniteSum> {
        self.sum.as_ref()
    }
}

/// The pair `(A, B)` of a generalized eigenproblem `Aw = λBw`.
#[derive(Debug, Clone)]
pub struct GeneralizedPair {
    pub a: Arc<dyn SymOperator>,
    pub b: Arc<dyn SymOperator>,
}

impl GeneralizedPair {
    pub fn new(a: Arc<dyn SymOperator>, b: Arc<dyn SymOperator>) -> Result<Self> {
        check_dims("operator pair", a.dim(), b.dim())?;
        if a.dim() == 0 {
            return Err(Error::DimensionMismatch("operators must have positive dimension".into()));
        }
        Ok(Self { a, b })
    }

    pub fn dense(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        Self::new(Arc::new(DenseOperator::new(a)?), Arc::new(DenseOperator::new(b)?))
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// Probes `xᵀBx > 0` on `samples` Gaussian vectors.
    pub fn check_positive_definite(&self, samples: usize, seed: u64) -> Result<()> {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(d, samples, |_, _| StandardNormal.sample(&mut rng));
        let bx = self.b.apply(&x);
        for c in 0..samples {
            let q = x.column(c).dot(&bx.column(c));
            if !(q > 0.0) {
                return Err(Error::NotPositiveDefinite(format!("xᵀBx = {q:e} for a sampled x")));
            }
        }
        Ok(())
    }
}
