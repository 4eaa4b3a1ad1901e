//! Canonical correlation analysis as the generalized eigenproblem
//!
//! ```text
//! [0    Σ₁₂] [φ]     [Σ₁₁  0 ] [φ]
//! [Σ₁₂ᵀ  0 ] [ψ] = λ [0   Σ₂₂] [ψ]
//! ```
//!
//! whose spectrum is `±ρ_i`. NAPI extracts the top `2k` subspace, which contains
//! `[φ_i; ±ψ_i]` for the top `k` canonical pairs; a shared Gaussian projection
//! and a per-view orthonormalization recover `k`-dimensional bases.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::bgeom::{b_gram_schmidt, SpectrumOracle};
use crate::error::{check_dims, Error, Result};
use crate::napi::{random_start, ConvergenceTrace, NapiConfig, NapiRunner, TraceRecord, Variant};
use crate::operator::{BlockDiagOperator, DataMatrix, GeneralizedPair, GramOperator, SymOperator};

/// Ridge presets used in the experiments.
pub const RIDGE_PRESETS: [f64; 2] = [1e-3, 1e-5];

#[derive(Debug, Clone)]
pub struct PairedViews {
    pub x: Arc<DataMatrix>,
    pub y: Arc<DataMatrix>,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl PairedViews {
    pub fn new(x: DataMatrix, y: DataMatrix, gamma1: f64, gamma2: f64) -> Result<Self> {
        check_dims("paired views row count", x.n_samples(), y.n_samples())?;
        if !(gamma1 >= 0.0 && gamma2 >= 0.0) {
            return Err(Error::Config(format!("ridges must be nonnegative, got {gamma1}, {gamma2}")));
        }
        if x.n_samples() == 0 {
            return Err(Error::Config("paired views have no samples".into()));
        }
        Ok(Self { x: Arc::new(x), y: Arc::new(y), gamma1, gamma2 })
    }

    pub fn n(&self) -> usize {
        self.x.n_samples()
    }

    pub fn d1(&self) -> usize {
        self.x.n_features()
    }

    pub fn d2(&self) -> usize {
        self.y.n_features()
    }

    pub fn sigma11(&self) -> Result<GramOperator> {
        GramOperator::new(self.x.clone(), self.gamma1)
    }

    pub fn sigma22(&self) -> Result<GramOperator> {
        GramOperator::new(self.y.clone(), self.gamma2)
    }

    /// `Σ₁₂ V = Xᵀ(YV)/n`
    pub fn cross(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        self.x.tr_mul(&self.y.mul(v)) / self.n() as f64
    }

    /// `Σ₁₂ᵀ U = Yᵀ(XU)/n`
    pub fn cross_t(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        self.y.tr_mul(&self.x.mul(u)) / self.n() as f64
    }
}

/// `[[0, Σ₁₂], [Σ₁₂ᵀ, 0]]`, applied through the data matrices.
#[derive(Debug, Clone)]
pub struct CrossCovOperator {
    views: PairedViews,
}

impl SymOperator for CrossCovOperator {
    fn dim(&self) -> usize {
        self.views.d1() + self.views.d2()
    }

    fn apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let (d1, d2) = (self.views.d1(), self.views.d2());
        let mut out = DMatrix::zeros(d1 + d2, v.ncols());
        out.rows_mut(0, d1).copy_from(&self.views.cross(&v.rows(d1, d2).into_owned()));
        out.rows_mut(d1, d2).copy_from(&self.views.cross_t(&v.rows(0, d1).into_owned()));
        out
    }

    fn nnz(&self) -> usize {
        self.views.x.nnz() + self.views.y.nnz()
    }
}

/// `A = [[0, Σ₁₂], [Σ₁₂ᵀ, 0]]` and `B = blockdiag(Σ₁₁, Σ₂₂)`, both implicit.
pub fn block_operators(views: &PairedViews) -> Result<GeneralizedPair> {
    let a: Arc<dyn SymOperator> = Arc::new(CrossCovOperator { views: views.clone() });
    let b: Arc<dyn SymOperator> =
        Arc::new(BlockDiagOperator::new(vec![Arc::new(views.sigma11()?), Arc::new(views.sigma22()?)])?);
    GeneralizedPair::new(a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CcaModel {
    #[serde(skip)]
    pub phi: DMatrix<f64>,
    #[serde(skip)]
    pub psi: DMatrix<f64>,
    pub correlations: Vec<f64>,
    pub iterations: usize,
    pub passes: f64,
}

/// `tr(ΦᵀΣ₁₂Ψ)`
pub fn cca_objective(model: &CcaModel, views: &PairedViews) -> f64 {
    model.phi.dot(&views.cross(&model.psi))
}

/// Projects the `2k` NAPI iterate to `k` canonical directions per view.
///
/// Both halves are multiplied by the same Gaussian `G`, orthonormalized in their
/// own covariance, then rotated by the SVD of `ΦᵀΣ₁₂Ψ` so that the cross
/// covariance is diagonal with nonnegative, descending entries.
pub fn extract_model(w: &DMatrix<f64>, views: &PairedViews, k: usize, seed: u64) -> Result<CcaModel> {
    let (d1, d2) = (views.d1(), views.d2());
    check_dims("stacked iterate rows", d1 + d2, w.nrows())?;
    let (s11, s22) = (views.sigma11()?, views.sigma22()?);
    let attempt = || -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let g = gaussian(w.ncols(), k, seed);
        let (phi, _) = b_gram_schmidt(&(w.rows(0, d1) * &g), &s11)?;
        let (psi, _) = b_gram_schmidt(&(w.rows(d1, d2) * &g), &s22)?;
        Ok((phi.into_inner(), psi.into_inner()))
    };
    let (phi, psi) = match attempt() {
        Err(Error::DegenerateBasis(_)) => {
            log::warn!("Gaussian projection was rank deficient; drawing a new one");
            let g = gaussian(w.ncols(), k, seed ^ 0x9e37_79b9_7f4a_7c15);
            let (phi, _) = b_gram_schmidt(&(w.rows(0, d1) * &g), &s11)?;
            let (psi, _) = b_gram_schmidt(&(w.rows(d1, d2) * &g), &s22)?;
            (phi.into_inner(), psi.into_inner())
        }
        other => other?,
    };
    let m = phi.tr_mul(&views.cross(&psi));
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let u = DMatrix::from_columns(&order.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    let v = DMatrix::from_columns(&order.iter().map(|&i| vt.row(i).transpose()).collect::<Vec<_>>());
    Ok(CcaModel {
        phi: phi * u,
        psi: psi * v,
        correlations: order.iter().map(|&i| svd.singular_values[i]).collect(),
        iterations: 0,
        passes: 0.0,
    })
}

fn gaussian(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng))
}

/// Algorithm 3 with the accelerated iteration.
pub fn cca_fit(
    views: &PairedViews,
    k: usize,
    cfg: &NapiConfig,
    oracle: Option<Arc<SpectrumOracle>>,
) -> Result<(CcaModel, ConvergenceTrace)> {
    cca_fit_with(views, k, cfg, Variant::Accelerated, oracle, |_, _| true)
}

/// [`cca_fit`] with a choice of iteration and a callback that sees the model
/// extracted after every outer step and returns whether to continue. The
/// callback's work is not counted in passes.
pub fn cca_fit_with(
    views: &PairedViews,
    k: usize,
    cfg: &NapiConfig,
    variant: Variant,
    oracle: Option<Arc<SpectrumOracle>>,
    mut observe: impl FnMut(&CcaModel, &TraceRecord) -> bool,
) -> Result<(CcaModel, ConvergenceTrace)> {
    if k == 0 || k > views.d1().min(views.d2()) {
        return Err(Error::Config(format!(
            "k = {k} must lie in 1..={} for views of width {} and {}",
            views.d1().min(views.d2()),
            views.d1(),
            views.d2()
        )));
    }
    let pair = block_operators(views)?;
    let inner = NapiConfig { k: 2 * k, ..cfg.clone() };
    let x0 = random_start(pair.dim(), 2 * k, cfg.seed);
    let mut runner = NapiRunner::build(&pair, inner, &x0, variant, oracle, true)?;
    let projection_seed = cfg.seed ^ 0x6a09_e667_f3bc_c908;
    let mut last = None;
    loop {
        let done = runner.state().t >= cfg.max_outer
            || matches!((cfg.target_sin, runner.trace().records.last()), (Some(s), Some(r)) if r.sin_theta.is_some_and(|x| x <= s));
        if done {
            break;
        }
        let info = runner.step()?;
        let model = extract_model(&runner.state().w_cur, views, k, projection_seed)?;
        let go_on = observe(&model, &info.record);
        last = Some(model);
        if !go_on {
            break;
        }
    }
    let mut model = match last {
        Some(m) => m,
        None => extract_model(&runner.state().w_cur, views, k, projection_seed)?,
    };
    model.iterations = runner.state().t;
    model.passes = runner.passes();
    Ok((model, runner.trace().clone()))
}

/// Exact top-`k` canonical correlations and directions from the whitened
/// cross-covariance `L₁⁻¹Σ₁₂L₂⁻ᵀ`.
pub fn dense_cca(views: &PairedViews, k: usize) -> Result<CcaModel> {
    let s11 = views.sigma11()?.to_dense().expect("Gram operators are dense-able");
    let s22 = views.sigma22()?.to_dense().expect("Gram operators are dense-able");
    let not_pd = || Error::NotPositiveDefinite("covariance is singular; increase the ridge".into());
    let l1 = s11.cholesky().ok_or_else(not_pd)?.l();
    let l2 = s22.cholesky().ok_or_else(not_pd)?.l();
    let d2 = views.d2();
    let s12 = views.cross(&DMatrix::identity(d2, d2));
    let m = l1.solve_lower_triangular(&s12).ok_or_else(not_pd)?;
    let m = l2.solve_lower_triangular(&m.transpose()).ok_or_else(not_pd)?.transpose();
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    order.truncate(k);
    let uk = DMatrix::from_columns(&order.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    let vk = DMatrix::from_columns(&order.iter().map(|&i| vt.row(i).transpose()).collect::<Vec<_>>());
    Ok(CcaModel {
        phi: l1.transpose().solve_upper_triangular(&uk).ok_or_else(not_pd)?,
        psi: l2.transpose().solve_upper_triangular(&vk).ok_or_else(not_pd)?,
        correlations: order.iter().map(|&i| svd.singular_values[i]).collect(),
        iterations: 0,
        passes: 0.0,
    })
}

/// Synthetic two-view data with planted canonical correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewsSpec {
    pub n: usize,
    pub d1: usize,
    pub d2: usize,
    pub correlations: Vec<f64>,
    /// Condition number of the per-view mixing applied to the raw features.
    pub mixing_kappa: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub seed: u64,
}

/// Latent pairs `(a_j, b_j)` with population correlation `ρ_j`, padded with
/// independent noise features, then mixed by `Q·diag(s)` with `s` log-uniform in
/// `[1, √κ]` so each view's covariance has condition number about `κ`.
pub fn synthetic_views(spec: &ViewsSpec) -> Result<PairedViews> {
    let p = spec.correlations.len();
    if p > spec.d1.min(spec.d2) {
        return Err(Error::Config("more planted correlations than features".into()));
    }
    if spec.correlations.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::Config("planted correlations must lie in [0, 1]".into()));
    }
    if !(spec.mixing_kappa >= 1.0) {
        return Err(Error::Config(format!("mixing condition must be at least 1, got {}", spec.mixing_kappa)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = DMatrix::from_fn(spec.n, spec.d1, |_, _| StandardNormal.sample(&mut rng));
    let mut y = DMatrix::from_fn(spec.n, spec.d2, |_, _| StandardNormal.sample(&mut rng));
    for (j, &rho) in spec.correlations.iter().enumerate() {
        for i in 0..spec.n {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[(i, j)] = rho.sqrt() * z + (1.0 - rho).sqrt() * x[(i, j)];
            y[(i, j)] = rho.sqrt() * z + (1.0 - rho).sqrt() * y[(i, j)];
        }
    }
    let mut mix = |d: usize| -> DMatrix<f64> {
        let q = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng)).qr().q();
        let root = spec.mixing_kappa.sqrt();
        let s = DVector::from_fn(d, |i, _| match i {
            0 => 1.0,
            1 => root,
            _ => root.powf(rng.random::<f64>()),
        });
        DMatrix::from_diagonal(&s) * q.transpose()
    };
    if spec.mixing_kappa > 1.0 {
        x = &x * mix(spec.d1);
        y = &y * mix(spec.d2);
    }
    PairedViews::new(DataMatrix::dense(&x), DataMatrix::dense(&y), spec.gamma1, spec.gamma2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bgeom::{dense_oracle, principal_angle, BBasis};
    use crate::napi::BetaMethod;
    use crate::operator::materialize;
    use crate::testutil::random_matrix;

    fn small_views(n: usize, d1: usize, d2: usize, seed: u64) -> PairedViews {
        synthetic_views(&ViewsSpec {
            n,
            d1,
            d2,
            correlations: vec![0.9, 0.6],
            mixing_kappa: 4.0,
            gamma1: 1e-3,
            gamma2: 1e-3,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn implicit_operators_match_dense() {
        let views = small_views(40, 5, 4, 1);
        let pair = block_operators(&views).unwrap();
        let xd = views.x.to_dense();
        let yd = views.y.to_dense();
        let n = 40.0;
        let s12 = xd.tr_mul(&yd) / n;
        let mut a = DMatrix::zeros(9, 9);
        a.view_mut((0, 5), (5, 4)).copy_from(&s12);
        a.view_mut((5, 0), (4, 5)).copy_from(&s12.transpose());
        let mut b = DMatrix::zeros(9, 9);
        b.view_mut((0, 0), (5, 5)).copy_from(&(xd.tr_mul(&xd) / n + DMatrix::identity(5, 5) * 1e-3));
        b.view_mut((5, 5), (4, 4)).copy_from(&(yd.tr_mul(&yd) / n + DMatrix::identity(4, 4) * 1e-3));
        let v = random_matrix(9, 3, 2);
        assert!((pair.a.apply(&v) - &a * &v).amax() < 1e-12);
        assert!((pair.b.apply(&v) - &b * &v).amax() < 1e-12);
        assert_eq!(pair.a.nnz(), 40 * 9);
    }

    #[test]
    fn identical_and_independent_views() {
        let x = random_matrix(30, 3, 3);
        let same = PairedViews::new(DataMatrix::dense(&x), DataMatrix::dense(&x), 0.0, 0.0).unwrap();
        let oracle = dense_oracle(&block_operators(&same).unwrap(), 100).unwrap();
        assert!((oracle.lambda(0) - 1.0).abs() < 1e-10);

        // every direction is perfectly correlated, so any fit reports 1
        let mut cfg = NapiConfig::new(1, BetaMethod::User(0.0), 0.5);
        cfg.max_outer = 5;
        let (model, _) = cca_fit(&same, 3, &cfg, None).unwrap();
        assert!(model.correlations.iter().all(|c| (c - 1.0).abs() < 1e-8));
        let x1 = random_matrix(30, 1, 11);
        let same = PairedViews::new(DataMatrix::dense(&x1), DataMatrix::dense(&x1), 0.0, 0.0).unwrap();
        let (model, _) = cca_fit(&same, 1, &cfg, None).unwrap();
        assert!((model.correlations[0] - 1.0).abs() < 1e-8);

        // orthogonal column spaces: Σ₁₂ = 0
        let mut xi = DMatrix::zeros(4, 1);
        xi[(0, 0)] = 1.0;
        xi[(1, 0)] = 1.0;
        let mut yi = DMatrix::zeros(4, 1);
        yi[(2, 0)] = 1.0;
        yi[(3, 0)] = -1.0;
        let ind = PairedViews::new(DataMatrix::dense(&xi), DataMatrix::dense(&yi), 0.1, 0.1).unwrap();
        let pair = block_operators(&ind).unwrap();
        assert_eq!(pair.a.apply(&random_matrix(2, 2, 4)).amax(), 0.0);
    }

    #[test]
    fn spectrum_comes_in_pairs() {
        let views = small_views(60, 6, 4, 5);
        let oracle = dense_oracle(&block_operators(&views).unwrap(), 100).unwrap();
        let l = oracle.eigenvalues();
        for i in 0..4 {
            assert!((l[2 * i] + l[2 * i + 1]).abs() < 1e-10, "{l:?}");
        }
        // two extra zero eigenvalues from the wider view
        assert!(l[8].abs() < 1e-10 && l[9].abs() < 1e-10);
    }

    #[test]
    fn dense_cca_matches_pair_spectrum() {
        let views = small_views(80, 5, 5, 6);
        let oracle = dense_oracle(&block_operators(&views).unwrap(), 100).unwrap();
        let cca = dense_cca(&views, 3).unwrap();
        for i in 0..3 {
            assert!((cca.correlations[i] - oracle.lambda(2 * i).abs()).abs() < 1e-10);
        }
        let expect: f64 = cca.correlations.iter().sum();
        assert!((cca_objective(&cca, &views) - expect).abs() < 1e-10);
    }

    #[test]
    fn objective_examples() {
        let views = small_views(50, 4, 4, 7);
        let cca = dense_cca(&views, 3).unwrap();
        let base = cca_objective(&cca, &views);
        let perm = |m: &DMatrix<f64>| DMatrix::from_columns(&[m.column(2), m.column(0), m.column(1)]);
        let swapped = CcaModel { phi: perm(&cca.phi), psi: perm(&cca.psi), ..cca.clone() };
        assert!((cca_objective(&swapped, &views) - base).abs() < 1e-12);
        let zero = CcaModel { psi: DMatrix::zeros(4, 3), ..cca };
        assert_eq!(cca_objective(&zero, &views), 0.0);
    }

    #[test]
    fn fit_recovers_canonical_pair() {
        let views = small_views(200, 6, 5, 8);
        let pair = block_operators(&views).unwrap();
        let oracle = Arc::new(dense_oracle(&pair, 100).unwrap());
        let mut cfg = NapiConfig::new(1, BetaMethod::Oracle, oracle.gap(2));
        cfg.max_outer = 500;
        cfg.target_sin = Some(1e-7);
        let (model, trace) = cca_fit(&views, 1, &cfg, Some(oracle)).unwrap();
        let truth = dense_cca(&views, 1).unwrap();
        let s11 = views.sigma11().unwrap();
        let angle = principal_angle(
            &BBasis::new(model.phi.clone(), &s11).unwrap(),
            &BBasis::new(truth.phi.clone(), &s11).unwrap(),
            &s11,
        )
        .unwrap();
        assert!(angle.sin <= 1e-6, "{}", angle.sin);
        assert!((model.correlations[0] - truth.correlations[0]).abs() < 1e-10);
        assert_eq!(model.iterations, trace.iterations());
        let s22 = views.sigma22().unwrap();
        let c1 = model.phi.tr_mul(&s11.apply(&model.phi));
        let c2 = model.psi.tr_mul(&s22.apply(&model.psi));
        assert!((c1[(0, 0)] - 1.0).abs() < 1e-8 && (c2[(0, 0)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn fit_rejects_bad_k() {
        let views = small_views(20, 3, 2, 9);
        let cfg = NapiConfig::new(1, BetaMethod::User(0.0), 0.5);
        assert!(matches!(cca_fit(&views, 3, &cfg, None), Err(Error::Config(_))));
        assert!(matches!(cca_fit(&views, 0, &cfg, None), Err(Error::Config(_))));
    }

    #[test]
    fn mixing_raises_condition() {
        let spec = ViewsSpec {
            n: 400,
            d1: 8,
            d2: 8,
            correlations: vec![0.5],
            mixing_kappa: 1e4,
            gamma1: 1e-5,
            gamma2: 1e-5,
            seed: 10,
        };
        let views = synthetic_views(&spec).unwrap();
        let s = materialize(&views.sigma11().unwrap(), 100).unwrap();
        let eig = s.symmetric_eigenvalues();
        assert!(eig.max() / eig.min() > 1e3);
    }
}
