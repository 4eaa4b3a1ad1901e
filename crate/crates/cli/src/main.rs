use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::json;

use napi_core::bench::{gen_pair, run_experiment, run_sweep, write_json, Algorithm, Decay, ProblemSource, RunConfig};
use napi_core::bgeom::{dense_oracle, SpectrumOracle, DEFAULT_DENSE_CAP};
use napi_core::cca::{cca_fit, dense_cca, synthetic_views, CcaModel, PairedViews};
use napi_core::config::ConfigFile;
use napi_core::io::{read_data, read_operator, write_matrix};
use napi_core::napi::{napi_top1, napi_topk, random_start, ConvergenceTrace};
use napi_core::operator::{materialize, GeneralizedPair};
use napi_core::Error;

#[derive(Parser, Debug)]
#[command(name = "napi", version, about = "Noisy accelerated power iteration for generalized eigenproblems and CCA")]
struct Cli {
    /// TOML file of keys; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic pair (A, B) or paired views (X, Y) to the output directory.
    Gen {
        #[arg(long, value_enum, default_value_t = GenKind::Pair)]
        kind: GenKind,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[command(flatten)]
        keys: Keys,
    },
    /// Top-k generalized eigenvectors of (A, B).
    Solve {
        #[command(flatten)]
        keys: Keys,
    },
    /// Top-k canonical directions of (X, Y).
    Cca {
        #[command(flatten)]
        keys: Keys,
    },
    /// NAPI against the power baseline over repetitions or a gap sweep.
    Bench {
        #[command(flatten)]
        keys: Keys,
    },
    /// Dense ground truth for a pair or for paired views.
    Oracle {
        #[command(flatten)]
        keys: Keys,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum GenKind {
    Pair,
    Views,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Format {
    Csv,
    Mtx,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Mtx => "mtx",
        }
    }
}

/// One flag per config key (`delta_hat` is `--delta-hat`).
#[derive(Args, Debug, Default)]
struct Keys {
    #[arg(long)]
    a: Option<PathBuf>,
    #[arg(long)]
    b: Option<PathBuf>,
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    /// oracle, estimate or user
    #[arg(long)]
    beta_method: Option<String>,
    #[arg(long)]
    beta_warmup: Option<usize>,
    #[arg(long)]
    delta_hat: Option<f64>,
    #[arg(long)]
    cos_theta0_hat: Option<f64>,
    #[arg(long)]
    gamma_ratio_hat: Option<f64>,
    #[arg(long)]
    phase_switch: Option<usize>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    oracle_coupled: Option<bool>,
    #[arg(long)]
    target_sin: Option<f64>,
    /// exact, gd, nesterov, svrg or asvrg
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    solver_step: Option<f64>,
    #[arg(long)]
    solver_epoch_len: Option<usize>,
    #[arg(long)]
    solver_seed: Option<u64>,
    #[arg(long)]
    solver_smoothing: Option<f64>,
    #[arg(long)]
    lambda_min: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// flat, geometric or linear
    #[arg(long)]
    decay: Option<Decay>,
    #[arg(long, value_delimiter = ',')]
    spectrum: Option<Vec<f64>>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d1: Option<usize>,
    #[arg(long)]
    d2: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    correlations: Option<Vec<f64>>,
    #[arg(long)]
    mixing_kappa: Option<f64>,
    /// napi, power
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<Algorithm>>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    timing: Option<bool>,
}

impl From<Keys> for ConfigFile {
    fn from(k: Keys) -> Self {
        ConfigFile {
            a: k.a,
            b: k.b,
            x: k.x,
            y: k.y,
            gamma1: k.gamma1,
            gamma2: k.gamma2,
            k: k.k,
            beta: k.beta,
            beta_method: k.beta_method,
            beta_warmup: k.beta_warmup,
            delta_hat: k.delta_hat,
            cos_theta0_hat: k.cos_theta0_hat,
            gamma_ratio_hat: k.gamma_ratio_hat,
            phase_switch: k.phase_switch,
            max_outer: k.max_outer,
            seed: k.seed,
            oracle_coupled: k.oracle_coupled,
            target_sin: k.target_sin,
            solver: k.solver,
            solver_step: k.solver_step,
            solver_epoch_len: k.solver_epoch_len,
            solver_seed: k.solver_seed,
            solver_smoothing: k.solver_smoothing,
            lambda_min: k.lambda_min,
            lambda_max: k.lambda_max,
            d: k.d,
            kappa: k.kappa,
            lambda1: k.lambda1,
            delta: k.delta,
            decay: k.decay,
            spectrum: k.spectrum,
            n: k.n,
            d1: k.d1,
            d2: k.d2,
            correlations: k.correlations,
            mixing_kappa: k.mixing_kappa,
            algorithms: k.algorithms,
            repetitions: k.repetitions,
            deltas: k.deltas,
            thresholds: k.thresholds,
            output: k.output,
            timing: k.timing,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for bad input or configuration, 3 for numerical failure.
fn exit_code(e: &Error) -> u8 {
    if e.is_config() || matches!(e, Error::Io(_)) {
        2
    } else {
        3
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Gen { kind, format, keys } => gen(&file.overlay(keys.into()), kind, format),
        Command::Solve { keys } => solve(&file.overlay(keys.into())),
        Command::Cca { keys } => cca(&file.overlay(keys.into())),
        Command::Bench { keys } => bench(&file.overlay(keys.into())),
        Command::Oracle { keys } => oracle(&file.overlay(keys.into())),
    }
}

fn output_dir(cfg: &ConfigFile) -> Result<PathBuf, Error> {
    let dir = ConfigFile::require(&cfg.output, "output")?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn gen(cfg: &ConfigFile, kind: GenKind, format: Format) -> Result<(), Error> {
    let dir = output_dir(cfg)?;
    let ext = format.ext();
    match kind {
        GenKind::Pair => {
            let spec = cfg.synthetic_spec()?;
            let (pair, oracle) = gen_pair(&spec)?;
            write_matrix(&dir.join(format!("A.{ext}")), &materialize(pair.a.as_ref(), DEFAULT_DENSE_CAP)?)?;
            write_matrix(&dir.join(format!("B.{ext}")), &materialize(pair.b.as_ref(), DEFAULT_DENSE_CAP)?)?;
            write_oracle(&dir, &oracle, oracle.dim())?;
        }
        GenKind::Views => {
            let views = synthetic_views(&cfg.views_spec()?)?;
            write_matrix(&dir.join(format!("X.{ext}")), &views.x.to_dense())?;
            write_matrix(&dir.join(format!("Y.{ext}")), &views.y.to_dense())?;
        }
    }
    Ok(())
}

fn load_pair(cfg: &ConfigFile) -> Result<(GeneralizedPair, Option<SpectrumOracle>), Error> {
    match (&cfg.a, &cfg.b) {
        (Some(a), Some(b)) => Ok((GeneralizedPair::new(read_operator(a)?, read_operator(b)?)?, None)),
        (None, None) => gen_pair(&cfg.synthetic_spec()?).map(|(p, o)| (p, Some(o))),
        _ => Err(Error::Config("`a` and `b` must be given together".into())),
    }
}

fn load_views(cfg: &ConfigFile) -> Result<PairedViews, Error> {
    match (&cfg.x, &cfg.y) {
        (Some(x), Some(y)) => {
            PairedViews::new(read_data(x)?, read_data(y)?, cfg.gamma1.unwrap_or(0.0), cfg.gamma2.unwrap_or(0.0))
        }
        (None, None) => synthetic_views(&cfg.views_spec()?),
        _ => Err(Error::Config("`x` and `y` must be given together".into())),
    }
}

/// The dense oracle is only built when something asks for it.
fn needs_oracle(cfg: &ConfigFile) -> bool {
    cfg.target_sin.is_some() || cfg.oracle_coupled == Some(true) || cfg.beta_method.as_deref() == Some("oracle")
}

fn write_trace(path: &Path, trace: &ConvergenceTrace, timing: bool) -> Result<(), Error> {
    let mut t = trace.clone();
    if !timing {
        t.records.iter_mut().for_each(|r| r.wall_ms = 0.0);
    }
    t.write_csv(std::fs::File::create(path)?)
}

fn solve(cfg: &ConfigFile) -> Result<(), Error> {
    let dir = output_dir(cfg)?;
    let (pair, generated) = load_pair(cfg)?;
    let napi = cfg.napi_config(None)?;
    let oracle = match generated {
        Some(o) => Some(Arc::new(o)),
        None if needs_oracle(cfg) => Some(Arc::new(dense_oracle(&pair, DEFAULT_DENSE_CAP)?)),
        None => None,
    };
    let x0 = random_start(pair.dim(), napi.k, napi.seed);
    let (w, trace) = if napi.k == 1 {
        let (w, trace) = napi_top1(&pair, &napi, &x0.column(0).into_owned(), oracle)?;
        (DMatrix::from_column_slice(w.len(), 1, w.as_slice()), trace)
    } else {
        let (w, trace) = napi_topk(&pair, &napi, &x0, oracle)?;
        (w.into_inner(), trace)
    };
    write_matrix(&dir.join("w.csv"), &w)?;
    write_trace(&dir.join("trace.csv"), &trace, cfg.timing.unwrap_or(false))?;
    write_json(
        &dir.join("summary.json"),
        &json!({
            "k": napi.k,
            "iterations": trace.iterations(),
            "passes": trace.passes(),
            "final_sin": trace.final_sin(),
        }),
    )
}

fn write_model(dir: &Path, model: &CcaModel) -> Result<(), Error> {
    write_matrix(&dir.join("phi.csv"), &model.phi)?;
    write_matrix(&dir.join("psi.csv"), &model.psi)?;
    write_json(&dir.join("summary.json"), model)
}

fn cca(cfg: &ConfigFile) -> Result<(), Error> {
    let dir = output_dir(cfg)?;
    let views = load_views(cfg)?;
    let k = cfg.k.unwrap_or(1);
    let napi = cfg.napi_config(None)?;
    let (model, trace) = cca_fit(&views, k, &napi, None)?;
    write_model(&dir, &model)?;
    write_trace(&dir.join("trace.csv"), &trace, cfg.timing.unwrap_or(false))
}

fn bench(cfg: &ConfigFile) -> Result<(), Error> {
    // a sweep overrides `delta`, so any of its values will do for the template
    let mut cfg = cfg.clone();
    if cfg.delta.is_none() {
        cfg.delta = cfg.deltas.as_ref().and_then(|d| d.first().copied());
    }
    let cfg = &cfg;
    let output = ConfigFile::require(&cfg.output, "output")?;
    let source = match (&cfg.a, &cfg.b) {
        (None, None) => ProblemSource::Synthetic(cfg.synthetic_spec()?),
        _ => ProblemSource::Pair(load_pair(cfg)?.0),
    };
    // placeholder Δ̂; the experiment replaces it with `delta_hat` or the oracle gap
    let napi = cfg.napi_config(Some(1.0))?;
    let run = RunConfig {
        source,
        algorithms: cfg.algorithms(),
        napi,
        delta_hat: cfg.delta_hat,
        repetitions: cfg.repetitions.unwrap_or(1),
        output,
        thresholds: cfg.thresholds(),
        timing: cfg.timing.unwrap_or(false),
    };
    match &cfg.deltas {
        Some(deltas) => run_sweep(&run, deltas).map(|_| ()),
        None => run_experiment(&run).map(|_| ()),
    }
}

fn write_oracle(dir: &Path, oracle: &SpectrumOracle, k: usize) -> Result<(), Error> {
    let k = k.min(oracle.dim());
    let values = DMatrix::from_column_slice(k, 1, &oracle.eigenvalues()[..k]);
    write_matrix(&dir.join("eigenvalues.csv"), &values)?;
    write_matrix(&dir.join("eigenvectors.csv"), &oracle.eigenvectors().columns(0, k).into_owned())
}

fn oracle(cfg: &ConfigFile) -> Result<(), Error> {
    let dir = output_dir(cfg)?;
    if cfg.x.is_some() || cfg.y.is_some() || cfg.n.is_some() {
        let views = load_views(cfg)?;
        let k = cfg.k.unwrap_or(views.d1().min(views.d2()));
        return write_model(&dir, &dense_cca(&views, k)?);
    }
    let (pair, generated) = load_pair(cfg)?;
    let oracle = match generated {
        Some(o) => o,
        None => dense_oracle(&pair, DEFAULT_DENSE_CAP)?,
    };
    write_oracle(&dir, &oracle, cfg.k.unwrap_or(oracle.dim()))
}
