//! Synthetic problems, the unaccelerated baseline, and experiment sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bgeom::{dense_oracle, SpectrumOracle, DEFAULT_DENSE_CAP};
use crate::cca::{cca_fit_with, cca_objective, dense_cca, PairedViews};
use crate::error::{Error, Result};
use crate::napi::{random_start, ConvergenceTrace, NapiConfig, NapiRunner, Variant};
use crate::operator::{DenseOperator, GeneralizedPair};

/// Default `sin θ` thresholds reported in summaries.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [1e-2, 1e-4, 1e-6];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    /// `λ₂ = … = λ_d`
    Flat,
    /// Tail falls geometrically from `λ₂` to `λ₂/10`.
    Geometric,
    /// Tail falls linearly from `λ₂` to 0.
    Linear,
}

impl std::str::FromStr for Decay {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(Decay::Flat),
            "geometric" => Ok(Decay::Geometric),
            "linear" => Ok(Decay::Linear),
            _ => Err(Error::Config(format!("unknown decay `{s}` (expected flat, geometric or linear)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spectrum {
    Explicit(Vec<f64>),
    Decay { lambda1: f64, delta: f64, decay: Decay },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d: usize,
    pub spectrum: Spectrum,
    /// Condition number of `B`.
    pub kappa: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The requested generalized eigenvalues.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let d = self.d;
        if d == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        match &self.spectrum {
            Spectrum::Explicit(l) => {
                if l.len() != d {
                    return Err(Error::Config(format!("spectrum has {} values for d = {d}", l.len())));
                }
                if l.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("spectrum must be finite".into()));
                }
                Ok(l.clone())
            }
            Spectrum::Decay { lambda1, delta, decay } => {
                if !(*lambda1 > 0.0 && lambda1.is_finite()) {
                    return Err(Error::Config(format!("lambda1 must be positive, got {lambda1}")));
                }
                if !(*delta > 0.0 && *delta <= 1.0) {
                    return Err(Error::Config(format!("gap must lie in (0, 1], got {delta}")));
                }
                let l2 = lambda1 * (1.0 - delta);
                let tail = d.saturating_sub(2).max(1) as f64;
                Ok((0..d)
                    .map(|i| match (i, decay) {
                        (0, _) => *lambda1,
                        (_, Decay::Flat) => l2,
                        (_, Decay::Geometric) => l2 * 0.1f64.powf((i - 1) as f64 / tail),
                        (_, Decay::Linear) => l2 * (1.0 - (i - 1) as f64 / tail),
                    })
                    .collect())
            }
        }
    }
}

/// `B = QDQᵀ` with `D` log-uniform in `[1, κ]` and `A = B^{1/2}P diag(λ) PᵀB^{1/2}`,
/// so that `U = B^{−1/2}P` are the generalized eigenvectors.
pub fn gen_pair(spec: &SyntheticSpec) -> Result<(GeneralizedPair, SpectrumOracle)> {
    let lambdas = spec.eigenvalues()?;
    if !(spec.kappa >= 1.0 && spec.kappa.is_finite()) {
        return Err(Error::Config(format!("kappa must be at least 1, got {}", spec.kappa)));
    }
    let d = spec.d;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let orthogonal = |rng: &mut ChaCha8Rng| DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(rng)).qr().q();
    let q = orthogonal(&mut rng);
    let p = orthogonal(&mut rng);
    let diag = DVector::from_fn(d, |i, _| match i {
        0 => 1.0,
        1 => spec.kappa,
        _ => spec.kappa.powf(rng.random::<f64>()),
    });
    let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
    let b = sym(&q * DMatrix::from_diagonal(&diag) * q.transpose());
    let b_half = &q * DMatrix::from_diagonal(&diag.map(f64::sqrt)) * q.transpose();
    let b_inv_half = &q * DMatrix::from_diagonal(&diag.map(|v| 1.0 / v.sqrt())) * q.transpose();
    let bp: DMatrix<f64> = &b_half * &p;
    let a = sym(&bp * DMatrix::from_diagonal(&DVector::from_vec(lambdas.clone())) * bp.transpose());
    let u = b_inv_half * p;
    let oracle = SpectrumOracle::from_parts(lambdas, u);
    if d > 1 && oracle.gap(1) <= 1e-12 {
        log::warn!("generated spectrum has no leading gap");
    }
    let pair = GeneralizedPair::new(Arc::new(DenseOperator::new(a)?), Arc::new(DenseOperator::new(b)?))?;
    Ok((pair, oracle))
}

/// Algorithm 1/2 with `β = 0` and the baseline's `Δ̂`-scaled residual targets.
pub fn power_baseline(
    pair: &GeneralizedPair,
    cfg: &NapiConfig,
    x0: &DMatrix<f64>,
    oracle: Option<Arc<SpectrumOracle>>,
) -> Result<(DMatrix<f64>, ConvergenceTrace)> {
    run_variant(pair, cfg, x0, oracle, Variant::Power)
}

fn run_variant(
    pair: &GeneralizedPair,
    cfg: &NapiConfig,
    x0: &DMatrix<f64>,
    oracle: Option<Arc<SpectrumOracle>>,
    variant: Variant,
) -> Result<(DMatrix<f64>, ConvergenceTrace)> {
    NapiRunner::build(pair, cfg.clone(), x0, variant, oracle, cfg.k > 1)?.run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Napi,
    Power,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "napi" => Ok(Algorithm::Napi),
            "power" => Ok(Algorithm::Power),
            _ => Err(Error::Config(format!("unknown algorithm `{s}` (expected napi or power)"))),
        }
    }
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Napi => "napi",
            Algorithm::Power => "power",
        }
    }

    fn variant(self) -> Variant {
        match self {
            Algorithm::Napi => Variant::Accelerated,
            Algorithm::Power => Variant::Power,
        }
    }
}

#[derive(Debug, Clone)]
pub enum ProblemSource {
    Synthetic(SyntheticSpec),
    Pair(GeneralizedPair),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: ProblemSource,
    pub algorithms: Vec<Algorithm>,
    pub napi: NapiConfig,
    /// Gap estimate for the schedule; the oracle gap `Δ_k` when absent.
    pub delta_hat: Option<f64>,
    pub repetitions: usize,
    pub output: PathBuf,
    pub thresholds: Vec<f64>,
    /// Record wall-clock times; disable for byte-identical output.
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub repetition: usize,
    pub seed: u64,
    pub trace_file: Option<String>,
    pub iterations: usize,
    pub passes: f64,
    pub final_sin: Option<f64>,
    /// Passes at the first iterate below each threshold.
    pub passes_to: Vec<Option<f64>>,
    pub iterations_to: Vec<Option<usize>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub thresholds: Vec<f64>,
    pub median_passes_to: Vec<Option<f64>>,
    pub median_iterations_to: Vec<Option<f64>>,
    pub median_final_sin: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub dimension: usize,
    pub k: usize,
    pub beta_method: String,
    pub gap: Option<f64>,
    pub runs: Vec<RunResult>,
    pub algorithms: Vec<AlgorithmSummary>,
}

/// Median of the values present; `None` unless more than half the runs reached it.
pub fn median(values: &[Option<f64>]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.len() * 2 <= values.len() || v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len();
    Some(if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) })
}

/// Seed of repetition `r` derived from the master seed.
pub fn derive_seed(master: u64, r: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(r as u64 + 1);
    rng.random()
}

/// Runs every algorithm `repetitions` times, writing one trace CSV per run and
/// `summary.json` into `cfg.output`. Solver failures are recorded, not raised.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentSummary> {
    if cfg.repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    if cfg.algorithms.is_empty() {
        return Err(Error::Config("no algorithms selected".into()));
    }
    cfg.napi.validate()?;
    fs::create_dir_all(&cfg.output)?;
    let k = cfg.napi.k;
    let mut runs = Vec::new();
    let mut dimension = 0;
    let mut gap = None;
    for r in 0..cfg.repetitions {
        let seed = derive_seed(cfg.napi.seed, r);
        let (pair, oracle) = match &cfg.source {
            ProblemSource::Synthetic(spec) => {
                let (pair, oracle) = gen_pair(&SyntheticSpec { seed, ..spec.clone() })?;
                (pair, Some(Arc::new(oracle)))
            }
            ProblemSource::Pair(pair) => {
                let oracle = if pair.dim() <= DEFAULT_DENSE_CAP {
                    Some(Arc::new(dense_oracle(pair, DEFAULT_DENSE_CAP)?))
                } else {
                    None
                };
                (pair.clone(), oracle)
            }
        };
        dimension = pair.dim();
        let oracle_gap = oracle.as_ref().filter(|o| k < o.dim()).map(|o| o.gap(k));
        gap = gap.or(oracle_gap);
        let mut napi = cfg.napi.clone();
        napi.seed = seed;
        napi.schedule.delta_hat = match cfg.delta_hat.or(oracle_gap) {
            Some(d) => d.clamp(f64::MIN_POSITIVE, 1.0),
            None => return Err(Error::Config("delta_hat is required without an oracle".into())),
        };
        let x0 = random_start(pair.dim(), k, seed);
        for &alg in &cfg.algorithms {
            let file = format!("{}_rep{r}.csv", alg.name());
            let result = match run_variant(&pair, &napi, &x0, oracle.clone(), alg.variant()) {
                Ok((_, mut trace)) => {
                    if !cfg.timing {
                        trace.records.iter_mut().for_each(|rec| rec.wall_ms = 0.0);
                    }
                    trace.write_csv(fs::File::create(cfg.output.join(&file))?)?;
                    RunResult {
                        algorithm: alg,
                        repetition: r,
                        seed,
                        trace_file: Some(file),
                        iterations: trace.iterations(),
                        passes: trace.passes(),
                        final_sin: trace.final_sin(),
                        passes_to: cfg.thresholds.iter().map(|&s| trace.first_below(s).map(|x| x.passes)).collect(),
                        iterations_to: cfg.thresholds.iter().map(|&s| trace.first_below(s).map(|x| x.t)).collect(),
                        error: None,
                    }
                }
                Err(e) => {
                    log::warn!("{} repetition {r} failed: {e}", alg.name());
                    RunResult {
                        algorithm: alg,
                        repetition: r,
                        seed,
                        trace_file: None,
                        iterations: 0,
                        passes: 0.0,
                        final_sin: None,
                        passes_to: vec![None; cfg.thresholds.len()],
                        iterations_to: vec![None; cfg.thresholds.len()],
                        error: Some(e.to_string()),
                    }
                }
            };
            runs.push(result);
        }
    }
    let algorithms = cfg
        .algorithms
        .iter()
        .map(|&alg| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.algorithm == alg).collect();
            let col = |i: usize, f: &dyn Fn(&RunResult, usize) -> Option<f64>| -> Option<f64> {
                median(&mine.iter().map(|r| f(r, i)).collect::<Vec<_>>())
            };
            AlgorithmSummary {
                algorithm: alg,
                thresholds: cfg.thresholds.clone(),
                median_passes_to: (0..cfg.thresholds.len()).map(|i| col(i, &|r, i| r.passes_to[i])).collect(),
                median_iterations_to: (0..cfg.thresholds.len())
                    .map(|i| col(i, &|r, i| r.iterations_to[i].map(|v| v as f64)))
                    .collect(),
                median_final_sin: median(&mine.iter().map(|r| r.final_sin).collect::<Vec<_>>()),
                failures: mine.iter().filter(|r| r.error.is_some()).count(),
            }
        })
        .collect();
    let summary =
        ExperimentSummary { dimension, k, beta_method: format!("{:?}", cfg.napi.beta), gap, runs, algorithms };
    write_json(&cfg.output.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// One [`run_experiment`] per gap value, each in `output/delta_<Δ>`.
pub fn run_sweep(cfg: &RunConfig, deltas: &[f64]) -> Result<Vec<(f64, ExperimentSummary)>> {
    let ProblemSource::Synthetic(spec) = &cfg.source else {
        return Err(Error::Config("a gap sweep needs a synthetic problem".into()));
    };
    let Spectrum::Decay { lambda1, decay, .. } = spec.spectrum else {
        return Err(Error::Config("a gap sweep needs a (lambda1, delta, decay) spectrum".into()));
    };
    let mut out = Vec::new();
    for &delta in deltas {
        let sub = RunConfig {
            source: ProblemSource::Synthetic(SyntheticSpec {
                spectrum: Spectrum::Decay { lambda1, delta, decay },
                ..spec.clone()
            }),
            output: cfg.output.join(format!("delta_{delta}")),
            ..cfg.clone()
        };
        out.push((delta, run_experiment(&sub)?));
    }
    write_json(
        &cfg.output.join("sweep.json"),
        &out.iter().map(|(d, s)| serde_json::json!({ "delta": d, "algorithms": s.algorithms })).collect::<Vec<_>>(),
    )?;
    Ok(out)
}

/// Full-data passes until the CCA objective is within `target` of the dense
/// optimum, or `None` if `cfg.max_outer` iterations do not suffice.
pub fn cca_passes_to(
    views: &PairedViews,
    k: usize,
    cfg: &NapiConfig,
    variant: Variant,
    target: f64,
) -> Result<Option<f64>> {
    let optimum: f64 = dense_cca(views, k)?.correlations.iter().sum();
    let mut hit = None;
    cca_fit_with(views, k, cfg, variant, None, |model, rec| {
        if optimum - cca_objective(model, views) <= target {
            hit = Some(rec.passes);
        }
        hit.is_none()
    })?;
    Ok(hit)
}
