use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sbridge_core::conditional::{
    conditional_chain, random_start_pair, surrogate_simulate, trajectory_generate, ClosureModel, ConditionalSpec,
    NoiseMode, VectorField,
};
use sbridge_core::datasets::{
    self, consecutive_pairs, CouplingMode, MultiscaleConfig, OdeOptions, SemisphereConfig, SlowFastLorenz,
};
use sbridge_core::evaluation::{entropic_ot, histogram, ks_statistic, OtConfig};
use sbridge_core::experiment::{self, ExperimentOptions, Scale};
use sbridge_core::model_file::{load_model, save_model, FitMetadata};
use sbridge_core::rng::{stream_rng, Stream};
use sbridge_core::training::{write_matrix_csv, TrainingSet};
use sbridge_core::{
    run_chain, sinkhorn_fit, BridgeModel, Init, KernelMode, KernelSpec, SamplerConfig, Scheme, SinkhornOptions,
};

mod config;

#[derive(Parser, Debug)]
#[command(name = "sbridge", version, about = "Schrödinger-bridge Langevin sampling from training data")]
struct Cli {
    /// TOML file with default flag values; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset as CSV.
    Dataset(DatasetArgs),
    /// Fit the bridge model to training data.
    Fit(FitArgs),
    /// Run a Langevin chain from a fitted model.
    Sample(SampleArgs),
    /// Sample the free block given a clamped block.
    Conditional(ConditionalArgs),
    /// Run the stochastic surrogate of the slow dynamics.
    Surrogate(SurrogateArgs),
    /// Generate a trajectory from a model over consecutive pairs.
    Trajectory(TrajectoryArgs),
    /// Compare generated samples with reference samples.
    Evaluate(EvaluateArgs),
    /// Run a named experiment preset.
    Experiment(ExperimentArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DatasetKind {
    Ring,
    Singular,
    Semisphere,
    L63,
    Multiscale,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Coupling {
    Additive,
    Multiplicative,
}

#[derive(Args, Debug)]
#[command(args_override_self = true, allow_negative_numbers = true)]
struct DatasetArgs {
    kind: DatasetKind,
    /// Number of samples (time points for l63 and multiscale).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.06)]
    sigma_r: f64,
    #[arg(long, default_value_t = 0.6)]
    sigma_theta: f64,
    #[arg(long, default_value_t = 1e-4)]
    nu: f64,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 5.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    radial_noise: f64,
    #[arg(long)]
    full_sphere: bool,
    /// Sampling interval of the time series.
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    /// Discarded initial time of the time series.
    #[arg(long, default_value_t = 100.0)]
    transient: f64,
    /// Emit consecutive pairs instead of the l63 series.
    #[arg(long)]
    pairs: bool,
    #[arg(long, value_enum, default_value_t = Coupling::Additive)]
    coupling: Coupling,
    #[arg(long, default_value_t = 0.01)]
    eps_sep: f64,
    /// Where the multiscale closure pairs (z, ψ) go.
    #[arg(long)]
    closure_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-8)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-10)]
    atol: f64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true, allow_negative_numbers = true)]
struct FitArgs {
    /// Training data (CSV rows, or `.sbts`).
    #[arg(long)]
    data: PathBuf,
    /// The CSV has a header line.
    #[arg(long)]
    header: bool,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Fixed)]
    mode: ModeArg,
    /// Exponent of the variable bandwidth (≤ 0).
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 10_000)]
    dense_limit: usize,
    /// Model file; metadata goes next to it with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModeArg {
    Fixed,
    VariableBandwidth,
    EmpiricalCovariance,
}

impl From<ModeArg> for KernelMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fixed => KernelMode::Fixed,
            ModeArg::VariableBandwidth => KernelMode::VariableBandwidth,
            ModeArg::EmpiricalCovariance => KernelMode::EmpiricalCovariance,
        }
    }
}

#[derive(Args, Debug)]
struct ChainArgs {
    #[arg(long, default_value_t = 10_000)]
    steps: usize,
    /// Burn-in steps; 60% of the chain if omitted.
    #[arg(long)]
    burn: Option<usize>,
    #[arg(long, default_value_t = 20)]
    thin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Start point (comma separated); a random training point if omitted.
    #[arg(long, value_delimiter = ',')]
    init: Option<Vec<f64>>,
}

impl ChainArgs {
    fn config(&self, scheme: Scheme) -> SamplerConfig {
        let mut cfg = SamplerConfig::new(scheme, self.steps, self.seed).with_thin(self.thin);
        if let Some(b) = self.burn {
            cfg = cfg.with_burn_in(b);
        }
        if let Some(x) = &self.init {
            cfg = cfg.with_init(Init::Explicit(x.clone()));
        }
        cfg
    }
}

#[derive(Args, Debug)]
#[command(args_override_self = true, allow_negative_numbers = true)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "aware-split")]
    scheme: Scheme,
    #[command(flatten)]
    chain: ChainArgs,
    /// Virtual time step of the direct schemes; ε if omitted.
    #[arg(long)]
    delta_tau: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step weight diagnostics as JSON lines.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Noisy half-steps of split schemes at the kept indices.
    #[arg(long)]
    half_steps: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true, allow_negative_numbers = true)]
struct ConditionalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Zero-based indices of the clamped block.
    #[arg(long, value_delimiter = ',', required = true)]
    y_indices: Vec<usize>,
    /// Observed values of the clamped block.
    #[arg(long, value_delimiter = ',', required = true)]
    y_star: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    n_inner: usize,
    #[arg(long, value_enum, default_value_t = NoiseArg::Unaware)]
    noise: NoiseArg,
    /// Restart the inner chain every outer step.
    #[arg(long)]
    reset_inner: bool,
    #[command(flatten)]
    chain: ChainArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum NoiseArg {
    Unaware,
    Aware,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DriftArg {
    /// `z(1 - z²)`.
    DoubleWell,
    Zero,
}

#[derive(Args, Debug)]
#[command(args_override_self = true, allow_negative_numbers = true)]
struct SurrogateArgs {
    /// Model over closure pairs `(z, ψ)`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    z0: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    n_outer: usize,
    #[arg(long, default_value_t = 100)]
    n_inner: usize,
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    #[arg(long, value_enum, default_value_t = DriftArg::DoubleWell)]
    drift: DriftArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true, allow_negative_numbers = true)]
struct TrajectoryArgs {
    /// Model over consecutive pairs.
    #[arg(long)]
    model: PathBuf,
    /// First state; with `--y1`. A random training pair if omitted.
    #[arg(long, value_delimiter = ',', requires = "y1")]
    y0: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', requires = "y0")]
    y1: Option<Vec<f64>>,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 20)]
    n_inner: usize,
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true, allow_negative_numbers = true)]
struct EvaluateArgs {
    #[arg(long)]
    generated: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Both CSVs have a header line.
    #[arg(long)]
    header: bool,
    /// Inverse entropy weight λ.
    #[arg(long, default_value_t = 100.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 50_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Coordinate for the histograms; the last one if omitted.
    #[arg(long)]
    coordinate: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct ExperimentArgs {
    /// Preset name.
    name: String,
    #[arg(long, default_value = "full")]
    scale: Scale,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; `runs/<name>` if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cache for generated slow–fast data.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Use the original, larger problem sizes.
    #[arg(long)]
    paper_size: bool,
}

fn main() -> ExitCode {
    let args = match config::expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// A closed downstream pipe (`sbridge ... | head`) is not a failure.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    let pipe = |io: &io::Error| io.kind() == io::ErrorKind::BrokenPipe;
    e.chain().any(|c| match c.downcast_ref::<sbridge_core::Error>() {
        Some(sbridge_core::Error::Io(io)) => pipe(io),
        _ => c.downcast_ref::<io::Error>().is_some_and(pipe),
    })
}

/// 2 for bad inputs and convergence failures, 1 for internal faults.
fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(core) = e.downcast_ref::<sbridge_core::Error>() {
        return match core {
            sbridge_core::Error::Io(io) if io.kind() == io::ErrorKind::NotFound => 2,
            other if other.is_user_facing() => 2,
            _ => 1,
        };
    }
    if let Some(io) = e.downcast_ref::<io::Error>() {
        return if io.kind() == io::ErrorKind::NotFound { 2 } else { 1 };
    }
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    1
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Dataset(a) => cmd_dataset(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Conditional(a) => cmd_conditional(a),
        Command::Surrogate(a) => cmd_surrogate(a),
        Command::Trajectory(a) => cmd_trajectory(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_columns(path: Option<&Path>, data: &nalgebra::DMatrix<f64>, time: Option<(&str, &[f64])>) -> Result<()> {
    let mut w = sink(path)?;
    write_matrix_csv(&mut w, data, time)?;
    w.flush()?;
    Ok(())
}

fn cmd_dataset(a: DatasetArgs) -> Result<()> {
    let ode = OdeOptions {
        rtol: a.rtol,
        atol: a.atol,
    };
    let out = a.out.as_deref();
    match a.kind {
        DatasetKind::Ring => {
            let ts = datasets::gaussian_ring(a.m.unwrap_or(2000), a.sigma_r, a.sigma_theta, a.seed)?;
            write_columns(out, ts.data(), None)
        }
        DatasetKind::Singular => {
            let ts = datasets::singular_gaussian_2d(a.m.unwrap_or(1000), a.nu, a.seed)?;
            write_columns(out, ts.data(), None)
        }
        DatasetKind::Semisphere => {
            let cfg = SemisphereConfig {
                alpha: a.alpha,
                radial_noise: a.radial_noise,
                full_sphere: a.full_sphere,
                ..SemisphereConfig::new(a.m.unwrap_or(1000), a.d)
            };
            let ts = datasets::hyper_semisphere(&cfg, a.seed)?;
            write_columns(out, ts.data(), None)
        }
        DatasetKind::L63 => {
            let series = datasets::lorenz63_series(a.m.unwrap_or(10_001), a.dt, a.transient, a.seed, ode)?;
            if a.pairs {
                write_columns(out, consecutive_pairs(&series)?.data(), None)
            } else {
                write_columns(out, &series, None)
            }
        }
        DatasetKind::Multiscale => {
            let mode = match a.coupling {
                Coupling::Additive => CouplingMode::Additive,
                Coupling::Multiplicative => CouplingMode::Multiplicative,
            };
            let cfg = MultiscaleConfig {
                eps_sep: a.eps_sep,
                dt_out: a.dt,
                transient: a.transient,
                ode,
                ..MultiscaleConfig::new(mode, a.m.unwrap_or(20_001))
            };
            let z = datasets::multiscale_l63(&cfg, a.seed)?;
            let series = nalgebra::DMatrix::from_row_slice(1, z.len(), &z);
            write_columns(out, &series, None)?;
            if let Some(path) = &a.closure_out {
                let drift = |z: &[f64]| nalgebra::DVector::from_element(1, SlowFastLorenz::slow_drift(z[0]));
                let pairs = sbridge_core::conditional::extract_closure_samples(&series, &drift, a.dt)?;
                write_columns(Some(path), pairs.data(), None)?;
            }
            Ok(())
        }
    }
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let ts = TrainingSet::load(&a.data, a.header).with_context(|| format!("reading {}", a.data.display()))?;
    let spec = match KernelMode::from(a.mode) {
        KernelMode::Fixed => KernelSpec::fixed(&ts, a.epsilon)?,
        KernelMode::VariableBandwidth => KernelSpec::variable(&ts, a.epsilon, a.beta)?,
        KernelMode::EmpiricalCovariance => KernelSpec::empirical_covariance(&ts, a.epsilon)?,
    };
    let opts = SinkhornOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        dense_limit: a.dense_limit,
    };
    let model = sinkhorn_fit(&ts, &spec, opts)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_model(&model, &a.out)?;
    print_json(&serde_json::to_value(FitMetadata::of(&model))?)?;
    Ok(())
}

fn load(path: &Path) -> Result<BridgeModel> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let model = load(&a.model)?;
    let mut cfg = a.chain.config(a.scheme).with_half_steps(a.half_steps.is_some());
    if let Some(dt) = a.delta_tau {
        cfg = cfg.with_delta_tau(dt);
    }
    let out = run_chain(&model, &cfg)?;
    let mut w = sink(a.out.as_deref())?;
    out.write_samples_csv(&mut w)?;
    w.flush()?;
    if let Some(p) = &a.diagnostics {
        let mut w = sink(Some(p))?;
        out.write_diagnostics_jsonl(&mut w)?;
        w.flush()?;
    }
    if let (Some(p), Some(h)) = (&a.half_steps, &out.half_steps) {
        write_columns(Some(p), h, None)?;
    }
    Ok(())
}

fn cmd_conditional(a: ConditionalArgs) -> Result<()> {
    let model = load(&a.model)?;
    let spec = ConditionalSpec::new(model.dim(), a.y_indices.clone(), a.y_star.clone(), a.n_inner)?
        .with_noise_mode(match a.noise {
            NoiseArg::Unaware => NoiseMode::Unaware,
            NoiseArg::Aware => NoiseMode::Aware,
        })
        .with_reset_inner(a.reset_inner);
    let cfg = a.chain.config(Scheme::UnawareSplit);
    let out = conditional_chain(&model, &spec, &cfg)?;
    let mut w = sink(a.out.as_deref())?;
    out.write_samples_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_surrogate(a: SurrogateArgs) -> Result<()> {
    let model = load(&a.model)?;
    let ds = model.dim() / 2;
    if a.z0.len() != ds {
        return Err(usage(format!("--z0 needs {ds} values, got {}", a.z0.len())));
    }
    let drift: VectorField = match a.drift {
        DriftArg::DoubleWell => {
            if ds != 1 {
                return Err(usage("the double-well drift is one-dimensional"));
            }
            Box::new(|z| nalgebra::DVector::from_element(1, SlowFastLorenz::slow_drift(z[0])))
        }
        DriftArg::Zero => Box::new(move |_| nalgebra::DVector::zeros(ds)),
    };
    let cm = ClosureModel::new(model, drift, a.dt)?;
    let mut rng = stream_rng(a.seed, Stream::Sample);
    let path = surrogate_simulate(&cm, &a.z0, a.n_outer, a.n_inner, &mut rng)?;
    let times: Vec<f64> = (1..=a.n_outer).map(|k| k as f64 * a.dt).collect();
    write_columns(a.out.as_deref(), &path, Some(("t", &times)))
}

fn cmd_trajectory(a: TrajectoryArgs) -> Result<()> {
    let model = load(&a.model)?;
    let mut rng = stream_rng(a.seed, Stream::Sample);
    let (y0, y1) = match (a.y0, a.y1) {
        (Some(y0), Some(y1)) => (y0, y1),
        _ => random_start_pair(&model, &mut rng),
    };
    let traj = trajectory_generate(&model, &y0, &y1, a.steps, a.n_inner, &mut rng)?;
    let times: Vec<f64> = (1..=a.steps).map(|k| k as f64 * a.dt).collect();
    write_columns(a.out.as_deref(), &traj, Some(("t", &times)))
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let gen = TrainingSet::load(&a.generated, a.header).with_context(|| format!("reading {}", a.generated.display()))?;
    let reference =
        TrainingSet::load(&a.reference, a.header).with_context(|| format!("reading {}", a.reference.display()))?;
    if gen.dim() != reference.dim() {
        return Err(usage(format!(
            "generated samples have {} columns, reference {}",
            gen.dim(),
            reference.dim()
        )));
    }
    let cfg = OtConfig {
        lambda: a.lambda,
        max_iter: a.max_iter,
        tol: a.tol,
    };
    let ot = entropic_ot(gen.data(), reference.data(), &cfg)?;
    let d = gen.dim();
    let row = |ts: &TrainingSet, k: usize| -> Vec<f64> { ts.data().row(k).iter().copied().collect() };
    let ks = (0..d)
        .map(|k| ks_statistic(&row(&gen, k), &row(&reference, k)))
        .collect::<sbridge_core::Result<Vec<_>>>()?;
    let k = a.coordinate.unwrap_or(d - 1);
    if k >= d {
        return Err(usage(format!("--coordinate {k} out of range for dimension {d}")));
    }
    let (g, r) = (row(&gen, k), row(&reference, k));
    let lo = g.iter().chain(&r).copied().fold(f64::INFINITY, f64::min);
    let hi = g.iter().chain(&r).copied().fold(f64::NEG_INFINITY, f64::max);
    let hg = histogram(&g, a.bins, Some((lo, hi)))?;
    let hr = histogram(&r, a.bins, Some((lo, hi)))?;
    let report = serde_json::json!({
        "ot_distance": ot.distance,
        "transport_cost": ot.transport_cost,
        "entropy": ot.entropy,
        "marginals_residual": ot.plan_residual,
        "iterations": ot.iterations,
        "lambda": cfg.lambda,
        "ks": ks,
        "histogram": {
            "coordinate": k,
            "edges": hg.edges,
            "generated": hg.counts,
            "reference": hr.counts,
        },
    });
    let mut w = sink(a.out.as_deref())?;
    writeln!(w, "{}", serde_json::to_string_pretty(&report)?)?;
    w.flush()?;
    Ok(())
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(v)?)?;
    out.flush()?;
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    if !experiment::PRESETS.contains(&a.name.as_str()) {
        return Err(usage(format!(
            "unknown preset {:?}; available presets: {}",
            a.name,
            experiment::PRESETS.join(", ")
        )));
    }
    let out = a.out.unwrap_or_else(|| Path::new("runs").join(&a.name));
    let mut opts = ExperimentOptions::new(a.seed, a.scale)
        .with_out_dir(&out)
        .with_threads(experiment::threads_from_env());
    opts.paper_size = a.paper_size;
    if let Some(c) = a.cache {
        opts = opts.with_cache_dir(c);
    }
    let summary = experiment::run_experiment(&a.name, &opts)?;
    print_json(&summary)?;
    eprintln!("artifacts written to {}", out.display());
    Ok(())
}
