//! Flat key/value configuration shared by the config file and command-line flags.
//!
//! Every key is optional at parse time; the builders below decide which keys a
//! given task needs and fill in defaults for the rest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{Algorithm, Decay, Spectrum, SyntheticSpec, DEFAULT_THRESHOLDS};
use crate::cca::ViewsSpec;
use crate::error::{Error, Result};
use crate::lsolve::{SolverKind, SpectralBounds, SvrgParams};
use crate::napi::{BetaMethod, ErrorSchedule, NapiConfig};

pub const DEFAULT_BETA_WARMUP: usize = 20;
pub const DEFAULT_KAPPA: f64 = 10.0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    // inputs
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,

    // iteration
    pub k: Option<usize>,
    pub beta: Option<f64>,
    /// `oracle`, `estimate` or `user`.
    pub beta_method: Option<String>,
    pub beta_warmup: Option<usize>,
    pub delta_hat: Option<f64>,
    pub cos_theta0_hat: Option<f64>,
    pub gamma_ratio_hat: Option<f64>,
    pub phase_switch: Option<usize>,
    pub max_outer: Option<usize>,
    pub seed: Option<u64>,
    pub oracle_coupled: Option<bool>,
    pub target_sin: Option<f64>,

    // least-squares solver
    /// `exact`, `gd`, `nesterov`, `svrg` or `asvrg`.
    pub solver: Option<String>,
    pub solver_step: Option<f64>,
    pub solver_epoch_len: Option<usize>,
    pub solver_seed: Option<u64>,
    pub solver_smoothing: Option<f64>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,

    // synthetic problems
    pub d: Option<usize>,
    pub kappa: Option<f64>,
    pub lambda1: Option<f64>,
    pub delta: Option<f64>,
    pub decay: Option<Decay>,
    pub spectrum: Option<Vec<f64>>,
    pub n: Option<usize>,
    pub d1: Option<usize>,
    pub d2: Option<usize>,
    pub correlations: Option<Vec<f64>>,
    pub mixing_kappa: Option<f64>,

    // experiments
    pub algorithms: Option<Vec<Algorithm>>,
    pub repetitions: Option<usize>,
    pub deltas: Option<Vec<f64>>,
    pub thresholds: Option<Vec<f64>>,
    pub output: Option<PathBuf>,
    pub timing: Option<bool>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident; $($f:ident),* $(,)?) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f; } )*
    };
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Keys set in `top` replace those in `self`.
    pub fn overlay(mut self, top: ConfigFile) -> Self {
        overlay_fields!(self, top;
            a, b, x, y, gamma1, gamma2,
            k, beta, beta_method, beta_warmup, delta_hat, cos_theta0_hat, gamma_ratio_hat,
            phase_switch, max_outer, seed, oracle_coupled, target_sin,
            solver, solver_step, solver_epoch_len, solver_seed, solver_smoothing, lambda_min, lambda_max,
            d, kappa, lambda1, delta, decay, spectrum, n, d1, d2, correlations, mixing_kappa,
            algorithms, repetitions, deltas, thresholds, output, timing,
        );
        self
    }

    pub fn require<T: Clone>(value: &Option<T>, key: &str) -> Result<T> {
        value.clone().ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    pub fn solver_kind(&self) -> Result<SolverKind> {
        let name = self.solver.as_deref().unwrap_or("exact");
        let svrg = || -> Result<SvrgParams> {
            let seed = self
                .solver_seed
                .ok_or_else(|| Error::Config(format!("solver `{name}` is stochastic and needs `solver_seed`")))?;
            Ok(SvrgParams { step: self.solver_step, epoch_len: self.solver_epoch_len, seed })
        };
        let kind = match name {
            "exact" => SolverKind::Exact,
            "gd" => SolverKind::GradientDescent { step: self.solver_step },
            "nesterov" => SolverKind::Nesterov { step: self.solver_step },
            "svrg" => SolverKind::Svrg(svrg()?),
            "asvrg" => SolverKind::AcceleratedSvrg { svrg: svrg()?, smoothing: self.solver_smoothing },
            other => {
                return Err(Error::Config(format!(
                    "unknown solver `{other}` (expected exact, gd, nesterov, svrg or asvrg)"
                )))
            }
        };
        Ok(kind)
    }

    pub fn ls_bounds(&self) -> Result<Option<SpectralBounds>> {
        match (self.lambda_min, self.lambda_max) {
            (None, None) => Ok(None),
            (Some(lo), Some(hi)) => SpectralBounds::new(lo, hi).map(Some),
            _ => Err(Error::Config("`lambda_min` and `lambda_max` must be given together".into())),
        }
    }

    /// Without `beta_method`, a given `beta` means `user` and otherwise `estimate`.
    pub fn beta_method(&self) -> Result<BetaMethod> {
        let warmup = self.beta_warmup.unwrap_or(DEFAULT_BETA_WARMUP);
        match (self.beta_method.as_deref(), self.beta) {
            (None, Some(b)) | (Some("user"), Some(b)) => Ok(BetaMethod::User(b)),
            (Some("user"), None) => Err(Error::Config("beta_method `user` needs `beta`".into())),
            (None, None) | (Some("estimate"), _) => Ok(BetaMethod::Estimate { warmup }),
            (Some("oracle"), _) => Ok(BetaMethod::Oracle),
            (Some(other), _) => {
                Err(Error::Config(format!("unknown beta_method `{other}` (expected oracle, estimate or user)")))
            }
        }
    }

    /// `default_delta` stands in for a missing `delta_hat`.
    pub fn napi_config(&self, default_delta: Option<f64>) -> Result<NapiConfig> {
        let delta_hat =
            self.delta_hat.or(default_delta).ok_or_else(|| Error::Config("missing required key `delta_hat`".into()))?;
        let mut schedule = ErrorSchedule::new(delta_hat);
        schedule.cos_theta0_hat = self.cos_theta0_hat;
        if let Some(g) = self.gamma_ratio_hat {
            schedule.gamma_ratio_hat = g;
        }
        schedule.phase_switch = self.phase_switch;
        let mut cfg = NapiConfig::new(self.k.unwrap_or(1), self.beta_method()?, delta_hat);
        cfg.schedule = schedule;
        if let Some(m) = self.max_outer {
            cfg.max_outer = m;
        }
        cfg.solver = self.solver_kind()?;
        cfg.ls_bounds = self.ls_bounds()?;
        cfg.seed = self.seed.unwrap_or(0);
        cfg.target_sin = self.target_sin;
        cfg.oracle_coupled = self.oracle_coupled.unwrap_or(false);
        cfg.validate()?;
        Ok(cfg)
    }

    /// An explicit `spectrum` wins over `lambda1`/`delta`/`decay`.
    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let spectrum = match &self.spectrum {
            Some(values) => Spectrum::Explicit(values.clone()),
            None => Spectrum::Decay {
                lambda1: self.lambda1.unwrap_or(1.0),
                delta: Self::require(&self.delta, "delta")?,
                decay: self.decay.unwrap_or(Decay::Geometric),
            },
        };
        let d = match (&self.spectrum, self.d) {
            (Some(values), Some(d)) if d != values.len() => {
                return Err(Error::Config(format!("`d` = {d} but `spectrum` has {} values", values.len())))
            }
            (Some(values), _) => values.len(),
            (None, d) => Self::require(&d, "d")?,
        };
        Ok(SyntheticSpec { d, spectrum, kappa: self.kappa.unwrap_or(DEFAULT_KAPPA), seed: self.seed.unwrap_or(0) })
    }

    pub fn views_spec(&self) -> Result<ViewsSpec> {
        Ok(ViewsSpec {
            n: Self::require(&self.n, "n")?,
            d1: Self::require(&self.d1, "d1")?,
            d2: Self::require(&self.d2, "d2")?,
            correlations: Self::require(&self.correlations, "correlations")?,
            mixing_kappa: self.mixing_kappa.unwrap_or(DEFAULT_KAPPA),
            gamma1: self.gamma1.unwrap_or(0.0),
            gamma2: self.gamma2.unwrap_or(0.0),
            seed: self.seed.unwrap_or(0),
        })
    }

    pub fn algorithms(&self) -> Vec<Algorithm> {
        self.algorithms.clone().unwrap_or_else(|| vec![Algorithm::Napi, Algorithm::Power])
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.thresholds.clone().unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec())
    }
}
