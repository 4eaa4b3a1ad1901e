//! Geometry in the `B`-inner product `⟨x, y⟩_B = xᵀBy`.
//!
//! Norms, Gram–Schmidt, and principal angles are all measured against a positive
//! definite `B`. [`dense_oracle`] computes the full generalized spectrum by brute
//! force and is the ground truth that tests and diagnostics compare against.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{check_dims, Error, Result};
use crate::operator::{materialize, GeneralizedPair, SymOperator};

/// Default dimension cap for the `O(d³)` dense oracle.
pub const DEFAULT_DENSE_CAP: usize = 2000;

/// Gram–Schmidt declares a column dependent when its remaining `B`-norm falls below
/// this fraction of its original norm.
pub const RANK_TOL: f64 = 1e-12;

/// Largest `‖XᵀBX − I‖_max` accepted as "orthonormal" at contract checks.
pub const ORTHO_TOL: f64 = 1e-8;

/// Below this cosine the tangent is reported as `+∞`.
pub const TAN_COS_FLOOR: f64 = 1e-14;

pub fn b_inner(x: &DVector<f64>, y: &DVector<f64>, b: &dyn SymOperator) -> Result<f64> {
    check_dims("b_inner lhs", b.dim(), x.len())?;
    check_dims("b_inner rhs", b.dim(), y.len())?;
    Ok(x.dot(&b.apply_vec(y)))
}

pub fn b_norm(x: &DVector<f64>, b: &dyn SymOperator) -> Result<f64> {
    let q = b_inner(x, x, b)?;
    if q < 0.0 {
        return Err(Error::NotPositiveDefinite(format!("xᵀBx = {q:e} < 0")));
    }
    Ok(q.sqrt())
}

/// Columns that are orthonormal in the `B`-inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct BBasis {
    columns: DMatrix<f64>,
}

impl BBasis {
    /// Checks `columnsᵀ B columns = I` to [`ORTHO_TOL`].
    pub fn new(columns: DMatrix<f64>, b: &dyn SymOperator) -> Result<Self> {
        check_dims("basis rows", b.dim(), columns.nrows())?;
        let err = orthonormality_error(&columns, b);
        if err > ORTHO_TOL {
            return Err(Error::Contract(format!("basis is not B-orthonormal (error {err:e})")));
        }
        Ok(Self { columns })
    }

    pub(crate) fn new_unchecked(columns: DMatrix<f64>) -> Self {
        Self { columns }
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.columns
    }

    pub fn k(&self) -> usize {
        self.columns.ncols()
    }

    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }
}

/// `‖WᵀBW − I‖_max`
pub fn orthonormality_error(w: &DMatrix<f64>, b: &dyn SymOperator) -> f64 {
    let k = w.ncols();
    (w.tr_mul(&b.apply(w)) - DMatrix::identity(k, k)).amax()
}

/// Gram–Schmidt in the `B`-inner product, one reorthogonalization pass per column.
///
/// Returns `(q, r)` with `w = q r`, `qᵀBq = I`, and `r` upper triangular with a
/// positive diagonal.
pub fn b_gram_schmidt(w: &DMatrix<f64>, b: &dyn SymOperator) -> Result<(BBasis, DMatrix<f64>)> {
    check_dims("gram-schmidt rows", b.dim(), w.nrows())?;
    let (d, k) = w.shape();
    if k == 0 {
        return Err(Error::DegenerateBasis("no columns".into()));
    }
    let bw = b.apply(w);
    let mut q = DMatrix::zeros(d, k);
    let mut bq = DMatrix::zeros(d, k);
    let mut r = DMatrix::zeros(k, k);
    for j in 0..k {
        let orig = w.column(j).dot(&bw.column(j));
        if !(orig > 0.0) {
            if orig < 0.0 {
                return Err(Error::NotPositiveDefinite(format!("wᵀBw = {orig:e} for column {j}")));
            }
            return Err(Error::DegenerateBasis(format!("column {j} is zero")));
        }
        let mut v = w.column(j).into_owned();
        for _ in 0..2 {
            if j == 0 {
                break;
            }
            let h = bq.columns(0, j).tr_mul(&v);
            v -= q.columns(0, j) * &h;
            for (i, hi) in h.iter().enumerate() {
                r[(i, j)] += hi;
            }
        }
        let bv = if j == 0 { bw.column(0).into_owned() } else { b.apply_vec(&v) };
        let nsq = v.dot(&bv);
        if nsq < 0.0 {
            return Err(Error::NotPositiveDefinite(format!("vᵀBv = {nsq:e} during orthogonalization")));
        }
        let nrm = nsq.sqrt();
        if nrm <= RANK_TOL * orig.sqrt() {
            return Err(Error::DegenerateBasis(format!(
                "column {j} is numerically dependent (residual {:e} of norm {:e})",
                nrm,
                orig.sqrt()
            )));
        }
        r[(j, j)] = nrm;
        q.set_column(j, &(v / nrm));
        bq.set_column(j, &(bv / nrm));
    }
    Ok((BBasis::new_unchecked(q), r))
}

/// Cosine, sine, and tangent of an angle between subspaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angle {
    pub cos: f64,
    pub sin: f64,
    pub tan: f64,
}

impl Angle {
    pub fn from_cos(cos: f64) -> Self {
        let cos = cos.clamp(0.0, 1.0);
        let sin = ((1.0 - cos) * (1.0 + cos)).max(0.0).sqrt();
        let tan = if cos < TAN_COS_FLOOR { f64::INFINITY } else { sin / cos };
        Self { cos, sin, tan }
    }
}

/// Largest principal angle between `span(x)` and `span(y)`.
pub fn principal_angle(x: &BBasis, y: &BBasis, b: &dyn SymOperator) -> Result<Angle> {
    check_dims("principal_angle rows", x.dim(), y.dim())?;
    check_dims("principal_angle columns", x.k(), y.k())?;
    check_dims("principal_angle metric", b.dim(), x.dim())?;
    for (name, basis) in [("x", x), ("y", y)] {
        let err = orthonormality_error(basis.columns(), b);
        if err > ORTHO_TOL {
            return Err(Error::Contract(format!("{name} is not B-orthonormal (error {err:e})")));
        }
    }
    let m = x.columns().tr_mul(&b.apply(y.columns()));
    let sv = SVD::new(m, false, false).singular_values;
    let cos = sv.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Angle::from_cos(cos))
}

/// Angle between the lines spanned by two nonzero vectors of arbitrary `B`-norm.
pub fn vector_angle(x: &DVector<f64>, y: &DVector<f64>, b: &dyn SymOperator) -> Result<Angle> {
    let xy = b_inner(x, y, b)?;
    let nx = b_norm(x, b)?;
    let ny = b_norm(y, b)?;
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Contract("angle with a zero vector".into()));
    }
    Ok(Angle::from_cos(xy.abs() / (nx * ny)))
}

/// `‖B^{1/2}(XXᵀ − YYᵀ)B^{1/2}‖₂`, the projector distance between two subspaces.
///
/// Computed on `span([X Y])` from the Gram matrix of the stacked bases, so it shares
/// nothing with [`principal_angle`] beyond one operator apply.
pub fn subspace_distance(x: &BBasis, y: &BBasis, b: &dyn SymOperator) -> Result<f64> {
    check_dims("subspace_distance rows", x.dim(), y.dim())?;
    check_dims("subspace_distance columns", x.k(), y.k())?;
    for (name, basis) in [("x", x), ("y", y)] {
        let err = orthonormality_error(basis.columns(), b);
        if err > ORTHO_TOL {
            return Err(Error::Contract(format!("{name} is not B-orthonormal (error {err:e})")));
        }
    }
    let k = x.k();
    let mut z = DMatrix::zeros(x.dim(), 2 * k);
    z.columns_mut(0, k).copy_from(x.columns());
    z.columns_mut(k, k).copy_from(y.columns());
    let g = z.tr_mul(&b.apply(&z));
    let g = (&g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::new(g.clone());
    let top = eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..2 * k).filter(|&i| eig.eigenvalues[i] > 1e-13 * top).collect();
    // Coordinates of a B-orthonormal basis of span(Z): T = V₊ Λ₊^{-1/2}.
    let mut t = DMatrix::zeros(2 * k, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        t.set_column(c, &(eig.eigenvectors.column(i) / eig.eigenvalues[i].sqrt()));
    }
    let px = t.tr_mul(&g.columns(0, k));
    let py = t.tr_mul(&g.columns(k, k));
    let m = &px * px.transpose() - &py * py.transpose();
    let m = (&m + m.transpose()) * 0.5;
    Ok(SymmetricEigen::new(m).eigenvalues.amax())
}

/// Full generalized spectrum of a pair, eigenvalues sorted by `|λ|` descending.
#[derive(Debug, Clone)]
pub struct SpectrumOracle {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
}

impl SpectrumOracle {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Columns `u_i` with `UᵀBU = I`.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `λ_i`, zero-based.
    pub fn lambda(&self, i: usize) -> f64 {
        self.eigenvalues[i]
    }

    pub fn u(&self, i: usize) -> DVector<f64> {
        self.eigenvectors.column(i).into_owned()
    }

    /// The top-`k` eigenvectors.
    pub fn top(&self, k: usize) -> BBasis {
        BBasis::new_unchecked(self.eigenvectors.columns(0, k).into_owned())
    }

    /// Relative gap `Δ_k = 1 − |λ_{k+1}|/|λ_k|` for one-based `k`.
    pub fn gap(&self, k: usize) -> f64 {
        assert!(k >= 1 && k < self.dim(), "gap index {k} outside 1..{}", self.dim());
        let lk = self.eigenvalues[k - 1].abs();
        if lk == 0.0 {
            return 0.0;
        }
        1.0 - self.eigenvalues[k].abs() / lk
    }

    /// Builds an oracle from a known spectrum; used by the synthetic generators.
    pub(crate) fn from_parts(eigenvalues: Vec<f64>, eigenvectors: DMatrix<f64>) -> Self {
        let (eigenvalues, eigenvectors) = sort_spectrum(eigenvalues, eigenvectors);
        Self { eigenvalues, eigenvectors }
    }
}

/// Orders by `|λ|` descending, then signed value descending, then original index;
/// fixes each eigenvector's sign so that its largest-magnitude entry is positive.
fn sort_spectrum(values: Vec<f64>, vectors: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| {
        values[j].abs().total_cmp(&values[i].abs()).then(values[j].total_cmp(&values[i])).then(i.cmp(&j))
    });
    let mut out = DMatrix::zeros(vectors.nrows(), order.len());
    for (c, &i) in order.iter().enumerate() {
        let mut col = vectors.column(i).into_owned();
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        out.set_column(c, &col);
    }
    (order.iter().map(|&i| values[i]).collect(), out)
}

/// Dense ground truth: Cholesky `B = LLᵀ`, symmetric eigendecomposition of
/// `L⁻¹AL⁻ᵀ = PΛPᵀ`, back-transform `U = L⁻ᵀP`.
pub fn dense_oracle(pair: &GeneralizedPair, cap: usize) -> Result<SpectrumOracle> {
    let d = pair.dim();
    if d > cap {
        return Err(Error::Capacity { dim: d, cap });
    }
    let a = materialize(pair.a.as_ref(), cap)?;
    let b = materialize(pair.b.as_ref(), cap)?;
    let chol =
        b.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization of B failed".into()))?;
    let l = chol.l();
    let la =
        l.solve_lower_triangular(&a).ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
    let m = l
        .solve_lower_triangular(&la.transpose())
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let u = l
        .transpose()
        .solve_upper_triangular(&eig.eigenvectors)
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
    let oracle = SpectrumOracle::from_parts(eig.eigenvalues.iter().copied().collect(), u);
    if d > 1 && oracle.gap(1) <= 1e-12 {
        log::warn!(
            "leading eigenvalue magnitude is repeated (|λ₁| = {:e}, Δ = {:e}); top-1 iteration may not converge",
            oracle.lambda(0).abs(),
            oracle.gap(1)
        );
    }
    Ok(oracle)
}

/// One eigenvalue `μ` of the momentum-extended matrix `C = [[B⁻¹A, −βI], [I, 0]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtendedEigenvalue {
    pub mu: Complex<f64>,
    /// Zero-based index of the generalized eigenvalue `λ_i` the root came from.
    pub source: usize,
}

impl ExtendedEigenvalue {
    pub fn magnitude(&self) -> f64 {
        self.mu.norm()
    }

    pub fn is_real(&self) -> bool {
        self.mu.im == 0.0
    }
}

/// Both roots of `μ² − λμ + β = 0`, larger magnitude first.
pub fn quadratic_roots(lambda: f64, beta: f64) -> [Complex<f64>; 2] {
    let disc = lambda * lambda - 4.0 * beta;
    if disc >= 0.0 {
        let s = disc.sqrt();
        let big = 0.5 * (lambda + if lambda >= 0.0 { s } else { -s });
        let small = if big != 0.0 { beta / big } else { 0.0 };
        [Complex::new(big, 0.0), Complex::new(small, 0.0)]
    } else {
        let im = 0.5 * (-disc).sqrt();
        [Complex::new(0.5 * lambda, im), Complex::new(0.5 * lambda, -im)]
    }
}

/// The `2d` eigenvalues of the extended matrix, sorted by magnitude descending.
pub fn extended_eigenpairs(oracle: &SpectrumOracle, beta: f64) -> Result<Vec<ExtendedEigenvalue>> {
    extended_eigenvalues(oracle.eigenvalues(), beta)
}

pub fn extended_eigenvalues(lambdas: &[f64], beta: f64) -> Result<Vec<ExtendedEigenvalue>> {
    if !(beta >= 0.0) {
        return Err(Error::Config(format!("momentum β must be nonnegative, got {beta}")));
    }
    let mut out: Vec<ExtendedEigenvalue> = lambdas
        .iter()
        .enumerate()
        .flat_map(|(source, &l)| quadratic_roots(l, beta).map(|mu| ExtendedEigenvalue { mu, source }))
        .collect();
    out.sort_by(|a, b| {
        b.magnitude()
            .total_cmp(&a.magnitude())
            .then(a.source.cmp(&b.source))
            .then(b.mu.re.total_cmp(&a.mu.re))
            .then(b.mu.im.total_cmp(&a.mu.im))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::DenseOperator;
    use crate::testutil::{random_matrix, random_spd, random_symmetric};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn e(d: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    #[test]
    fn inner_product_examples() {
        let id = DenseOperator::identity(2);
        let b = DenseOperator::from_diagonal(&[2.0, 3.0]);
        assert_eq!(b_inner(&e(2, 0), &e(2, 0), &id).unwrap(), 1.0);
        assert_eq!(b_inner(&e(2, 0), &e(2, 1), &b).unwrap(), 0.0);
        let x = DVector::from_vec(vec![0.3, -1.7]);
        let y = DVector::from_vec(vec![2.1, 0.4]);
        let expect = 2.0 * 0.3 * 2.1 + 3.0 * -1.7 * 0.4;
        assert!((b_inner(&x, &y, &b).unwrap() - expect).abs() < 1e-15);
        assert!(matches!(b_inner(&DVector::zeros(3), &y, &b), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn norm_examples() {
        let b = DenseOperator::from_diagonal(&[4.0, 1.0]);
        assert_eq!(b_norm(&DVector::zeros(2), &b).unwrap(), 0.0);
        assert_eq!(b_norm(&e(2, 0), &b).unwrap(), 2.0);
        let bad = DenseOperator::from_diagonal(&[-1.0, 1.0]);
        assert!(matches!(b_norm(&e(2, 0), &bad), Err(Error::NotPositiveDefinite(_))));
        let spd = DenseOperator::new(random_spd(6, 10.0, 1)).unwrap();
        let x = random_matrix(6, 1, 2).column(0).into_owned();
        let n = b_norm(&x, &spd).unwrap();
        assert!((n * n - b_inner(&x, &x, &spd).unwrap()).abs() < 1e-12 * n * n);
    }

    #[test]
    fn gram_schmidt_examples() {
        let id = DenseOperator::identity(3);
        let w = DMatrix::from_column_slice(3, 1, &[2.0, 0.0, 0.0]);
        let (q, r) = b_gram_schmidt(&w, &id).unwrap();
        assert_eq!(q.columns().column(0), e(3, 0));
        assert_eq!(r[(0, 0)], 2.0);

        let b = DenseOperator::new(random_spd(20, 50.0, 3)).unwrap();
        let w = random_matrix(20, 3, 4);
        let (q, r) = b_gram_schmidt(&w, &b).unwrap();
        assert!((q.columns() * &r - &w).amax() < 1e-10 * w.amax());
        assert!(orthonormality_error(q.columns(), &b) < 1e-10);
        for i in 0..3 {
            assert!(r[(i, i)] > 0.0);
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
        // already orthonormal input comes back unchanged
        let (q2, r2) = b_gram_schmidt(q.columns(), &b).unwrap();
        assert!((q2.columns() - q.columns()).amax() < 1e-12);
        assert!((r2 - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn gram_schmidt_rank_deficiency() {
        let id = DenseOperator::identity(3);
        let w = DMatrix::from_column_slice(3, 2, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        assert!(matches!(b_gram_schmidt(&w, &id), Err(Error::DegenerateBasis(_))));
        let z = DMatrix::zeros(3, 1);
        assert!(matches!(b_gram_schmidt(&z, &id), Err(Error::DegenerateBasis(_))));
    }

    #[test]
    fn principal_angle_examples() {
        let id = DenseOperator::identity(2);
        let x = BBasis::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), &id).unwrap();
        let a = principal_angle(&x, &x, &id).unwrap();
        assert_eq!((a.cos, a.sin, a.tan), (1.0, 0.0, 0.0));

        let y = BBasis::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), &id).unwrap();
        let a = principal_angle(&x, &y, &id).unwrap();
        assert_eq!((a.cos, a.sin), (0.0, 1.0));
        assert!(a.tan.is_infinite());

        let y = BBasis::new(DMatrix::from_column_slice(2, 1, &[FRAC_1_SQRT_2, FRAC_1_SQRT_2]), &id).unwrap();
        let a = principal_angle(&x, &y, &id).unwrap();
        assert!((a.cos - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((a.sin - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((a.tan - 1.0).abs() < 1e-14);

        let not_ortho = BBasis::new_unchecked(DMatrix::from_column_slice(2, 1, &[2.0, 0.0]));
        assert!(matches!(principal_angle(&not_ortho, &x, &id), Err(Error::Contract(_))));
    }

    #[test]
    fn subspace_distance_examples() {
        let id = DenseOperator::identity(2);
        let x = BBasis::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), &id).unwrap();
        let y = BBasis::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), &id).unwrap();
        assert!(subspace_distance(&x, &x, &id).unwrap() < 1e-15);
        assert!((subspace_distance(&x, &y, &id).unwrap() - 1.0).abs() < 1e-15);

        let b = DenseOperator::new(random_spd(15, 20.0, 5)).unwrap();
        for seed in 0..5 {
            let (qx, _) = b_gram_schmidt(&random_matrix(15, 3, 10 + seed), &b).unwrap();
            let (qy, _) = b_gram_schmidt(&random_matrix(15, 3, 20 + seed), &b).unwrap();
            let s = principal_angle(&qx, &qy, &b).unwrap().sin;
            assert!((subspace_distance(&qx, &qy, &b).unwrap() - s).abs() < 1e-10);
        }
    }

    #[test]
    fn dense_oracle_examples() {
        let pair =
            GeneralizedPair::dense(DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0])), DMatrix::identity(2, 2))
                .unwrap();
        let o = dense_oracle(&pair, DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(o.eigenvalues(), &[3.0, 1.0]);
        assert!((o.eigenvectors() - DMatrix::identity(2, 2)).amax() < 1e-15);

        // A = diag(3,1), B = diag(9,1): λ = (1, 1/3), u₁ = e₂, u₂ = e₁/3
        let pair = GeneralizedPair::dense(
            DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0])),
            DMatrix::from_diagonal(&DVector::from_vec(vec![9.0, 1.0])),
        )
        .unwrap();
        let o = dense_oracle(&pair, DEFAULT_DENSE_CAP).unwrap();
        assert!((o.lambda(0) - 1.0).abs() < 1e-14);
        assert!((o.lambda(1) - 1.0 / 3.0).abs() < 1e-14);
        assert!((o.u(0) - e(2, 1)).amax() < 1e-14);
        assert!((o.u(1) - e(2, 0) / 3.0).amax() < 1e-14);
    }

    #[test]
    fn dense_oracle_errors() {
        let pair = GeneralizedPair::dense(DMatrix::identity(2, 2), DMatrix::from_diagonal_element(2, 2, -1.0)).unwrap();
        assert!(matches!(dense_oracle(&pair, 10), Err(Error::NotPositiveDefinite(_))));
        let pair = GeneralizedPair::dense(DMatrix::identity(3, 3), DMatrix::identity(3, 3)).unwrap();
        assert!(matches!(dense_oracle(&pair, 2), Err(Error::Capacity { dim: 3, cap: 2 })));
    }

    #[test]
    fn dense_oracle_satisfies_pencil() {
        for seed in 0..5 {
            let a = random_symmetric(30, 100 + seed);
            let b = random_spd(30, 100.0, 200 + seed);
            let pair = GeneralizedPair::dense(a.clone(), b.clone()).unwrap();
            let o = dense_oracle(&pair, DEFAULT_DENSE_CAP).unwrap();
            let u = o.eigenvectors();
            let lam = DMatrix::from_diagonal(&DVector::from_column_slice(o.eigenvalues()));
            assert!((&a * u - &b * u * lam).amax() < 1e-10);
            assert!((u.tr_mul(&(&b * u)) - DMatrix::identity(30, 30)).amax() < 1e-10);
            for w in o.eigenvalues().windows(2) {
                assert!(w[0].abs() >= w[1].abs());
            }
        }
    }

    #[test]
    fn ties_break_by_signed_value() {
        let pair = GeneralizedPair::dense(
            DMatrix::from_diagonal(&DVector::from_vec(vec![-2.0, 1.0, 2.0])),
            DMatrix::identity(3, 3),
        )
        .unwrap();
        let o = dense_oracle(&pair, 10).unwrap();
        assert_eq!(o.eigenvalues(), &[2.0, -2.0, 1.0]);
        assert_eq!(o.gap(1), 0.0);
    }

    #[test]
    fn extended_eigenvalue_examples() {
        let r = quadratic_roots(1.0, 0.25);
        assert_eq!(r, [Complex::new(0.5, 0.0), Complex::new(0.5, 0.0)]);
        let r = quadratic_roots(1.0, 0.21);
        assert!((r[0].re - 0.7).abs() < 1e-15 && (r[1].re - 0.3).abs() < 1e-15);
        let r = quadratic_roots(0.5, 0.25);
        assert!(r[0].im != 0.0);
        assert!((r[0].norm() - 0.5).abs() < 1e-15 && (r[1].norm() - 0.5).abs() < 1e-15);
        assert!(matches!(extended_eigenvalues(&[1.0], -0.1), Err(Error::Config(_))));
    }

    #[test]
    fn extended_eigenvalues_sorted() {
        let ext = extended_eigenvalues(&[1.0, -0.8, 0.2], 0.16).unwrap();
        assert_eq!(ext.len(), 6);
        for w in ext.windows(2) {
            assert!(w[0].magnitude() >= w[1].magnitude());
        }
        assert_eq!(ext[0].source, 0);
    }
}
