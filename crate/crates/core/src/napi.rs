//! Noisy accelerated power iteration.
//!
//! Each outer step approximately applies `B⁻¹A` by solving a least-squares
//! problem, subtracts the momentum term `βW_{t−1}`, and renormalizes both the
//! new and the previous iterate by the same factor so the recursion stays
//! equivalent to `x_{t+1} = B⁻¹Ax_t − βx_{t−1}`.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bgeom::{
    b_gram_schmidt, dense_oracle, principal_angle, quadratic_roots, Angle, BBasis, SpectrumOracle, DEFAULT_DENSE_CAP,
};
use crate::error::{check_dims, Error, Result};
use crate::lsolve::{LsSolver, SolverKind, SpectralBounds};
use crate::operator::{BlockDiagOperator, GeneralizedPair};

/// Below this the normalization scalar is treated as a collapse of the iterate.
pub const GAMMA_FLOOR: f64 = 1e-14;

/// Trace CSV header.
pub const TRACE_HEADER: [&str; 6] = ["t", "passes", "sin_theta", "alpha", "ls_ratio", "wall_ms"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMethod {
    /// `λ_{k+1}²/4` from the dense spectrum.
    Oracle,
    /// `λ̂_{k+1}²/4` from a few power iterations on a `(k+1)`-block.
    Estimate {
        warmup: usize,
    },
    User(f64),
}

/// Residual-ratio targets for the least-squares subproblems.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSchedule {
    /// Estimate of `Δ_k = 1 − |λ_{k+1}|/|λ_k|`.
    pub delta_hat: f64,
    /// Estimate of the cosine of the initial angle; `1/(10√(dk))` when absent.
    pub cos_theta0_hat: Option<f64>,
    /// Estimate of `|λ₁|/|λ_k|`, used only when `k > 1`.
    pub gamma_ratio_hat: f64,
    /// First iteration of the second phase; derived from the estimates when absent.
    pub phase_switch: Option<usize>,
}

impl ErrorSchedule {
    pub fn new(delta_hat: f64) -> Self {
        Self { delta_hat, cos_theta0_hat: None, gamma_ratio_hat: 1.0, phase_switch: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_hat > 0.0 && self.delta_hat <= 1.0) {
            return Err(Error::Config(format!("delta_hat must lie in (0, 1], got {}", self.delta_hat)));
        }
        if let Some(c) = self.cos_theta0_hat {
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::Config(format!("cos_theta0_hat must lie in (0, 1], got {c}")));
            }
        }
        if !(self.gamma_ratio_hat >= 1.0 && self.gamma_ratio_hat.is_finite()) {
            return Err(Error::Config(format!("gamma_ratio_hat must be at least 1, got {}", self.gamma_ratio_hat)));
        }
        Ok(())
    }

    fn cos0(&self, d: usize, k: usize) -> f64 {
        self.cos_theta0_hat.unwrap_or_else(|| 1.0 / (10.0 * ((d * k) as f64).sqrt())).min(1.0)
    }

    fn tan0(&self, d: usize, k: usize) -> f64 {
        let c = self.cos0(d, k);
        (1.0 - c * c).max(0.0).sqrt() / c
    }

    /// Iterations needed to bring `tan θ` down to 1 at the accelerated rate.
    pub fn switch_at(&self, d: usize, k: usize) -> usize {
        self.phase_switch.unwrap_or_else(|| {
            let t = 2.0 * std::f64::consts::SQRT_2 / self.delta_hat.sqrt() * self.tan0(d, k).ln();
            t.max(0.0).ceil() as usize
        })
    }

    /// Same as [`switch_at`](Self::switch_at) at the unaccelerated rate `1/Δ̂`.
    pub fn power_switch_at(&self, d: usize, k: usize) -> usize {
        self.phase_switch.unwrap_or_else(|| (self.tan0(d, k).ln() / self.delta_hat).max(0.0).ceil() as usize)
    }
}

/// `τ_t` for the accelerated iteration on a `d`-dimensional problem.
pub fn schedule_tau(sched: &ErrorSchedule, t: usize, k: usize, d: usize) -> f64 {
    let delta = sched.delta_hat;
    let tau = if k <= 1 {
        let c = sched.cos0(d, 1);
        if t < sched.switch_at(d, 1) {
            delta * c * c / 32.0
        } else {
            delta / 32.0
        }
    } else {
        let g2 = sched.gamma_ratio_hat.powi(2);
        let c = sched.cos0(d, k);
        if t < sched.switch_at(d, k) {
            delta * c.powi(4) / (128.0 * k as f64 * g2)
        } else {
            delta / (128.0 * g2)
        }
    };
    tau.clamp(f64::MIN_POSITIVE, 1.0)
}

/// `τ_t` for the unaccelerated baseline: every target carries an extra factor `Δ̂`.
pub fn schedule_tau_power(sched: &ErrorSchedule, t: usize, k: usize, d: usize) -> f64 {
    let shifted = ErrorSchedule {
        phase_switch: Some(if t < sched.power_switch_at(d, k) { usize::MAX } else { 0 }),
        ..sched.clone()
    };
    (schedule_tau(&shifted, t, k, d) * sched.delta_hat).clamp(f64::MIN_POSITIVE, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NapiConfig {
    pub beta: BetaMethod,
    pub k: usize,
    pub max_outer: usize,
    pub schedule: ErrorSchedule,
    pub solver: SolverKind,
    /// Spectral bracket of `B` for the solver certificate; estimated when absent.
    pub ls_bounds: Option<SpectralBounds>,
    pub seed: u64,
    /// Stop once `sin θ` against an attached oracle falls to this value.
    pub target_sin: Option<f64>,
    /// Set each subproblem target from the true angles (needs an oracle; `k = 1`).
    pub oracle_coupled: bool,
}

impl NapiConfig {
    pub fn new(k: usize, beta: BetaMethod, delta_hat: f64) -> Self {
        Self {
            beta,
            k,
            max_outer: 100,
            schedule: ErrorSchedule::new(delta_hat),
            solver: SolverKind::Exact,
            ls_bounds: None,
            seed: 0,
            target_sin: None,
            oracle_coupled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.max_outer == 0 {
            return Err(Error::Config("max_outer must be at least 1".into()));
        }
        if let BetaMethod::User(b) = self.beta {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::Config(format!("β must be nonnegative, got {b}")));
            }
        }
        if self.oracle_coupled && self.k != 1 {
            return Err(Error::Config("oracle-coupled schedule is only defined for k = 1".into()));
        }
        self.schedule.validate()
    }
}

/// `W_t`, `W_{t−1}` and the last normalization factor.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub w_prev: DMatrix<f64>,
    pub w_cur: DMatrix<f64>,
    /// `γ_t` when `k = 1`, otherwise `R_t[0, 0]`.
    pub gamma: f64,
    /// `R_t` of the last `B`-QR step (`1×1` holding `γ_t` when `k = 1`).
    pub r_mat: DMatrix<f64>,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub passes: f64,
    pub sin_theta: Option<f64>,
    pub alpha: f64,
    pub ls_ratio: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
}

impl ConvergenceTrace {
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.t)
    }

    pub fn passes(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.passes)
    }

    pub fn final_sin(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.sin_theta)
    }

    /// First record with `sin θ ≤ threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.sin_theta.is_some_and(|s| s <= threshold))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(TRACE_HEADER).map_err(io)?;
        for r in &self.records {
            w.write_record([
                r.t.to_string(),
                r.passes.to_string(),
                r.sin_theta.map(|s| format!("{s:e}")).unwrap_or_default(),
                r.alpha.to_string(),
                format!("{:e}", r.ls_ratio),
                format!("{:.3}", r.wall_ms),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Diagnostics of one outer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub record: TraceRecord,
    pub tau: f64,
    /// `r(α_t W_t)`, the subproblem's initial residual; needs an oracle.
    pub r_init: Option<f64>,
    /// `r(W̃_{t+1})` after any injected noise; needs an oracle.
    pub r_des: Option<f64>,
}

/// `wᵀAw / wᵀBw`, the multiple of `w` closest to `B⁻¹Aw` in the `B`-norm.
pub fn warm_start_scale(w: &DVector<f64>, pair: &GeneralizedPair) -> Result<f64> {
    check_dims("vector length", pair.dim(), w.len())?;
    let den = w.dot(&pair.b.apply_vec(w));
    if !(den > 0.0) {
        return Err(Error::Contract("warm start needs a nonzero vector".into()));
    }
    Ok(w.dot(&pair.a.apply_vec(w)) / den)
}

/// `Z = (WᵀBW)⁻¹WᵀAW`, the block analogue of [`warm_start_scale`].
pub fn warm_start_block(w: &DMatrix<f64>, pair: &GeneralizedPair) -> Result<DMatrix<f64>> {
    check_dims("block rows", pair.dim(), w.nrows())?;
    block_scale(w, &pair.a.apply(w), &pair.b.apply(w))
}

fn block_scale(w: &DMatrix<f64>, aw: &DMatrix<f64>, bw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = w.tr_mul(bw);
    let gram = (&gram + gram.transpose()) * 0.5;
    let chol = gram.cholesky().ok_or_else(|| Error::DegenerateBasis("WᵀBW is singular".into()))?;
    Ok(chol.solve(&w.tr_mul(aw)))
}

/// Momentum parameter for a rank-`k` run.
pub fn select_beta(
    pair: &GeneralizedPair,
    k: usize,
    method: &BetaMethod,
    oracle: Option<&SpectrumOracle>,
    seed: u64,
) -> Result<f64> {
    let d = pair.dim();
    match method {
        BetaMethod::Oracle => {
            if k >= d {
                return Ok(0.0);
            }
            let owned;
            let o = match oracle {
                Some(o) => o,
                None => {
                    owned = dense_oracle(pair, DEFAULT_DENSE_CAP)?;
                    &owned
                }
            };
            Ok(o.lambda(k).powi(2) / 4.0)
        }
        BetaMethod::Estimate { warmup } => {
            if k >= d {
                return Ok(0.0);
            }
            let ritz = estimate_ritz(pair, k + 1, *warmup, seed)?;
            Ok(ritz[k].powi(2) / 4.0)
        }
        BetaMethod::User(beta) => {
            if !(*beta >= 0.0) {
                return Err(Error::Config(format!("β must be nonnegative, got {beta}")));
            }
            if let Some(o) = oracle.filter(|o| k < o.dim()) {
                let two_sqrt = 2.0 * beta.sqrt();
                if !(o.lambda(k).abs() <= two_sqrt && two_sqrt < o.lambda(k - 1).abs()) {
                    log::warn!(
                        "β = {beta} lies outside |λ_{{k+1}}| ≤ 2√β < |λ_k| = [{}, {}); momentum is suboptimal",
                        o.lambda(k).abs(),
                        o.lambda(k - 1).abs()
                    );
                }
            }
            Ok(*beta)
        }
    }
}

/// Ritz values, by magnitude, after `iters` block power iterations with exact solves.
fn estimate_ritz(pair: &GeneralizedPair, m: usize, iters: usize, seed: u64) -> Result<Vec<f64>> {
    let d = pair.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbe7a);
    let x0 = DMatrix::from_fn(d, m, |_, _| StandardNormal.sample(&mut rng));
    let (mut w, _) = b_gram_schmidt(&x0, pair.b.as_ref())?;
    let mut solver = LsSolver::new(SolverKind::Exact, pair.b.as_ref())?;
    for _ in 0..iters {
        let aw = pair.a.apply(w.columns());
        let next = solver.solve(&aw, w.columns(), 1.0)?.solution;
        w = b_gram_schmidt(&next, pair.b.as_ref())?.0;
    }
    let h = w.columns().tr_mul(&pair.a.apply(w.columns()));
    let mut vals: Vec<f64> = SymmetricEigen::new((&h + h.transpose()) * 0.5).eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    Ok(vals)
}

/// `V = [UΛ_μ; U](I + Λ_μ²)^{−1/2}` for the top `k` extended eigenvectors, or
/// `None` when one of `μ_1 … μ_k` is complex.
pub fn extended_basis(oracle: &SpectrumOracle, k: usize, beta: f64) -> Option<DMatrix<f64>> {
    let d = oracle.dim();
    let mut v = DMatrix::zeros(2 * d, k);
    for i in 0..k {
        let mu = quadratic_roots(oracle.lambda(i), beta)[0];
        if mu.im != 0.0 {
            return None;
        }
        let s = (mu.re * mu.re + 1.0).sqrt();
        let u = oracle.u(i);
        v.view_mut((0, i), (d, 1)).copy_from(&(&u * (mu.re / s)));
        v.view_mut((d, i), (d, 1)).copy_from(&(&u / s));
    }
    Some(v)
}

/// `ϑ_t = [W_t; W_{t−1}]` and, when the extended oracle exists, its largest
/// principal angle to `V` in the metric `blockdiag(B, B)`.
pub fn extended_state(
    state: &IterateState,
    pair: &GeneralizedPair,
    oracle: &SpectrumOracle,
    beta: f64,
) -> Result<(DMatrix<f64>, Option<Angle>)> {
    let d = pair.dim();
    let k = state.w_cur.ncols();
    let mut theta = DMatrix::zeros(2 * d, k);
    theta.view_mut((0, 0), (d, k)).copy_from(&state.w_cur);
    theta.view_mut((d, 0), (d, k)).copy_from(&state.w_prev);
    let Some(v) = extended_basis(oracle, k, beta) else {
        log::info!("extended oracle unavailable: complex μ for β = {beta}");
        return Ok((theta, None));
    };
    let metric = BlockDiagOperator::new(vec![pair.b.clone(), pair.b.clone()])?;
    let (q, _) = b_gram_schmidt(&theta, &metric)?;
    let angle = principal_angle(&q, &BBasis::new_unchecked(v), &metric)?;
    Ok((theta, Some(angle)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Accelerated,
    /// `β = 0` with the baseline's `Δ̂`-scaled targets.
    Power,
}

/// A stepwise NAPI run.
pub struct NapiRunner<'p> {
    pair: &'p GeneralizedPair,
    cfg: NapiConfig,
    variant: Variant,
    beta: f64,
    solver: LsSolver<'p>,
    state: IterateState,
    passes: f64,
    oracle: Option<Arc<SpectrumOracle>>,
    trace: ConvergenceTrace,
    start: Instant,
    /// QR path even for `k = 1`.
    block: bool,
}

impl<'p> NapiRunner<'p> {
    pub fn new(pair: &'p GeneralizedPair, cfg: NapiConfig, x0: &DMatrix<f64>) -> Result<Self> {
        Self::build(pair, cfg, x0, Variant::Accelerated, None, false)
    }

    pub fn with_oracle(
        pair: &'p GeneralizedPair,
        cfg: NapiConfig,
        x0: &DMatrix<f64>,
        oracle: Arc<SpectrumOracle>,
    ) -> Result<Self> {
        Self::build(pair, cfg, x0, Variant::Accelerated, Some(oracle), false)
    }

    pub fn build(
        pair: &'p GeneralizedPair,
        cfg: NapiConfig,
        x0: &DMatrix<f64>,
        variant: Variant,
        oracle: Option<Arc<SpectrumOracle>>,
        block: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = pair.dim();
        check_dims("x0 rows", d, x0.nrows())?;
        check_dims("x0 columns", cfg.k, x0.ncols())?;
        if cfg.k > d {
            return Err(Error::Config(format!("k = {} exceeds dimension {d}", cfg.k)));
        }
        if let Some(o) = &oracle {
            check_dims("oracle dimension", d, o.dim())?;
        }
        if cfg.oracle_coupled && oracle.is_none() {
            return Err(Error::Config("oracle-coupled schedule needs an oracle".into()));
        }
        let beta = match variant {
            Variant::Power => 0.0,
            Variant::Accelerated => select_beta(pair, cfg.k, &cfg.beta, oracle.as_deref(), cfg.seed)?,
        };
        let mut passes = 0.0;
        let (w, r) = if cfg.k == 1 && !block {
            let g = x0.dot(&pair.b.apply(x0)).sqrt();
            passes += 1.0;
            if !(g > 0.0) {
                return Err(Error::Contract("x0 must be nonzero".into()));
            }
            (x0 / g, DMatrix::from_element(1, 1, g))
        } else {
            let (q, r) = b_gram_schmidt(x0, pair.b.as_ref())?;
            passes += 1.0;
            (q.into_inner(), r)
        };
        let mut solver = LsSolver::new(cfg.solver.clone(), pair.b.as_ref())?;
        if let Some(bounds) = cfg.ls_bounds {
            solver = solver.with_bounds(bounds);
        }
        let state = IterateState { w_prev: DMatrix::zeros(d, cfg.k), w_cur: w, gamma: r[(0, 0)], r_mat: r, t: 0 };
        Ok(Self {
            pair,
            cfg,
            variant,
            beta,
            solver,
            state,
            passes,
            oracle,
            trace: ConvergenceTrace::default(),
            start: Instant::now(),
            block,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn state(&self) -> &IterateState {
        &self.state
    }

    pub fn trace(&self) -> &ConvergenceTrace {
        &self.trace
    }

    pub fn passes(&self) -> f64 {
        self.passes
    }

    pub fn oracle(&self) -> Option<&SpectrumOracle> {
        self.oracle.as_deref()
    }

    /// `sin θ(W_t, U_k)` against the attached oracle.
    pub fn sin_theta(&self) -> Result<Option<f64>> {
        let Some(o) = &self.oracle else { return Ok(None) };
        let w = BBasis::new_unchecked(self.state.w_cur.clone());
        Ok(Some(principal_angle(&w, &o.top(self.cfg.k), self.pair.b.as_ref())?.sin))
    }

    fn is_done(&self) -> bool {
        if self.state.t >= self.cfg.max_outer {
            return true;
        }
        match (self.cfg.target_sin, self.trace.records.last()) {
            (Some(target), Some(r)) => r.sin_theta.is_some_and(|s| s <= target),
            _ => false,
        }
    }

    fn tau(&self) -> Result<f64> {
        let (d, k, t) = (self.pair.dim(), self.cfg.k, self.state.t);
        if self.cfg.oracle_coupled {
            if let Some(tau) = self.coupled_tau()? {
                return Ok(tau);
            }
        }
        Ok(match self.variant {
            Variant::Accelerated => schedule_tau(&self.cfg.schedule, t, k, d),
            Variant::Power => schedule_tau_power(&self.cfg.schedule, t, k, d),
        })
    }

    /// `(1 − |μ₂|/|μ₁|)² min{sin², cos²}(ϑ_t, v₁) / (16 sin²(w_t, u₁))`, capped at 1.
    fn coupled_tau(&self) -> Result<Option<f64>> {
        let o = self.oracle.as_deref().expect("validated at construction");
        if o.dim() < 2 {
            return Ok(None);
        }
        let beta = self.beta;
        let mu1 = quadratic_roots(o.lambda(0), beta)[0].norm();
        let mu2 = quadratic_roots(o.lambda(1), beta)[0].norm();
        let (_, ext) = extended_state(&self.state, self.pair, o, beta)?;
        let Some(ext) = ext else { return Ok(None) };
        let sin_w = self.sin_theta()?.unwrap_or(1.0);
        if sin_w == 0.0 {
            return Ok(Some(1.0));
        }
        let m = ext.sin.min(ext.cos);
        let tau = (1.0 - mu2 / mu1).powi(2) * m * m / (16.0 * sin_w * sin_w);
        Ok(Some(tau.clamp(f64::MIN_POSITIVE, 1.0)))
    }

    /// `‖X − B⁻¹AW_t‖²_{B,F}` via the oracle's eigendecomposition.
    fn exact_residual(&self, x: &DMatrix<f64>, bw: &DMatrix<f64>) -> Option<f64> {
        let o = self.oracle.as_deref()?;
        let u = o.eigenvectors();
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(o.eigenvalues()));
        // B⁻¹AW = UΛUᵀBW
        let star = u * (lam * u.tr_mul(bw));
        let diff = x - star;
        Some(diff.dot(&self.pair.b.apply(&diff)))
    }

    pub fn step(&mut self) -> Result<StepInfo> {
        self.step_with_noise(None)
    }

    /// One outer iteration; `noise` is added to the least-squares solution.
    pub fn step_with_noise(&mut self, noise: Option<&DMatrix<f64>>) -> Result<StepInfo> {
        let pair = self.pair;
        let k = self.cfg.k;
        let tau = self.tau()?;
        let w = &self.state.w_cur;
        let aw = pair.a.apply(w);
        let bw = pair.b.apply(w);
        self.passes += 2.0;

        let (alpha, x0) = if k == 1 && !self.block {
            let a = w.dot(&aw) / w.dot(&bw);
            (a, w * a)
        } else {
            let z = block_scale(w, &aw, &bw)?;
            let sym = (&z + z.transpose()) * 0.5;
            let top =
                SymmetricEigen::new(sym)
                    .eigenvalues
                    .iter()
                    .copied()
                    .fold(0.0, |m: f64, v| if v.abs() > m.abs() { v } else { m });
            (top, w * z)
        };
        let r_init = self.exact_residual(&x0, &bw);

        let rep = self.solver.solve(&aw, &x0, tau)?;
        self.passes += rep.passes;
        let mut next = rep.solution;
        if let Some(e) = noise {
            check_dims("noise rows", next.nrows(), e.nrows())?;
            check_dims("noise columns", next.ncols(), e.ncols())?;
            next += e;
        }
        let r_des = self.exact_residual(&next, &bw);
        if self.beta != 0.0 {
            next -= &self.state.w_prev * self.beta;
        }

        let t = self.state.t + 1;
        if k == 1 && !self.block {
            let gamma = next.dot(&pair.b.apply(&next)).sqrt();
            self.passes += 1.0;
            if !(gamma >= GAMMA_FLOOR) {
                return Err(Error::DegenerateIterate { t, gamma });
            }
            self.state.w_prev = &self.state.w_cur / gamma;
            self.state.w_cur = next / gamma;
            self.state.gamma = gamma;
            self.state.r_mat = DMatrix::from_element(1, 1, gamma);
        } else {
            let (q, r) = b_gram_schmidt(&next, pair.b.as_ref()).map_err(|e| match e {
                Error::DegenerateBasis(_) => Error::DegenerateIterate { t, gamma: 0.0 },
                other => other,
            })?;
            self.passes += 1.0;
            let gamma = r[(0, 0)];
            if !(gamma >= GAMMA_FLOOR) {
                return Err(Error::DegenerateIterate { t, gamma });
            }
            let r_inv = r
                .clone()
                .solve_upper_triangular(&DMatrix::identity(k, k))
                .ok_or(Error::DegenerateIterate { t, gamma })?;
            self.state.w_prev = &self.state.w_cur * r_inv;
            self.state.w_cur = q.into_inner();
            self.state.gamma = gamma;
            self.state.r_mat = r;
        }
        self.state.t = t;

        let record = TraceRecord {
            t,
            passes: self.passes,
            sin_theta: self.sin_theta()?,
            alpha,
            ls_ratio: rep.achieved_ratio,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
        };
        self.trace.records.push(record.clone());
        Ok(StepInfo { record, tau, r_init, r_des })
    }

    /// Steps until `max_outer` or the target angle; returns `W_T` and the trace.
    pub fn run(mut self) -> Result<(DMatrix<f64>, ConvergenceTrace)> {
        while !self.is_done() {
            self.step()?;
        }
        let mut w = self.state.w_cur;
        if w.ncols() == 1 {
            fix_sign(&mut w);
        }
        Ok((w, self.trace))
    }
}

/// Flips a single column so that its largest-magnitude entry is positive.
pub fn fix_sign(w: &mut DMatrix<f64>) {
    let (mut best, mut val) = (0.0f64, 0.0);
    for &x in w.iter() {
        if x.abs() > best {
            best = x.abs();
            val = x;
        }
    }
    if val < 0.0 {
        w.neg_mut();
    }
}

/// Algorithm 1: top generalized eigenvector.
pub fn napi_top1(
    pair: &GeneralizedPair,
    cfg: &NapiConfig,
    x0: &DVector<f64>,
    oracle: Option<Arc<SpectrumOracle>>,
) -> Result<(DVector<f64>, ConvergenceTrace)> {
    if cfg.k != 1 {
        return Err(Error::Config(format!("top-1 run needs k = 1, got {}", cfg.k)));
    }
    let x0 = DMatrix::from_column_slice(x0.len(), 1, x0.as_slice());
    let (w, trace) = NapiRunner::build(pair, cfg.clone(), &x0, Variant::Accelerated, oracle, false)?.run()?;
    Ok((w.column(0).into_owned(), trace))
}

/// Algorithm 2: top-`k` generalized eigenspace.
pub fn napi_topk(
    pair: &GeneralizedPair,
    cfg: &NapiConfig,
    x0: &DMatrix<f64>,
    oracle: Option<Arc<SpectrumOracle>>,
) -> Result<(BBasis, ConvergenceTrace)> {
    let (w, trace) = NapiRunner::build(pair, cfg.clone(), x0, Variant::Accelerated, oracle, true)?.run()?;
    Ok((BBasis::new_unchecked(w), trace))
}

/// Seeded standard-normal `d × k` start.
pub fn random_start(d: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(d, k, |_, _| StandardNormal.sample(&mut rng))
}
