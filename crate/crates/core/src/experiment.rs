//! Named presets that run the numerical experiments end to end and report
//! the quantities of interest as a deterministic summary.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::bridge::{sinkhorn_fit, BridgeModel, SinkhornOptions};
use crate::conditional::{
    extract_closure_samples, random_start_pair, surrogate_simulate, trajectory_generate, ClosureModel,
};
use crate::datasets::{
    consecutive_pairs, gaussian_ring, hyper_semisphere, hyper_semisphere_with_rng, lorenz63_series,
    multiscale_l63, ring_angle, singular_gaussian_2d, CouplingMode, MultiscaleConfig, OdeOptions,
    SemisphereConfig, SlowFastLorenz,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    autocorrelation, entropic_ot, histogram, histogram_modes, ks_statistic, marginal_ot_1d, mean_std, Histogram,
    OtConfig,
};
use crate::kernel::KernelSpec;
use crate::rng::{stream_rng, Stream};
use crate::sampler::{run_chain, ChainOutput, Init, SamplerConfig, Scheme};
use crate::training::{read_csv_rows, write_matrix_csv, TrainingSet};

pub const PRESETS: [&str; 8] = [
    "example-2d",
    "ring",
    "semisphere-3",
    "semisphere-4",
    "semisphere-9",
    "subgrid-additive",
    "subgrid-multiplicative",
    "l63-generate",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Small sizes for smoke runs.
    Quick,
    /// Sizes used for the reported results.
    #[default]
    Full,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Scale::Quick),
            "full" => Ok(Scale::Full),
            other => Err(Error::invalid(format!("unknown scale {other:?} (quick, full)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    pub seed: u64,
    pub scale: Scale,
    /// Where artifacts and `summary.json` go; nothing is written if unset.
    pub out_dir: Option<PathBuf>,
    /// Cache for expensive generated data (the slow–fast series).
    pub cache_dir: Option<PathBuf>,
    /// Worker threads for independent runs.
    pub threads: usize,
    /// Use the original, larger sizes where they differ from the defaults
    /// (subgrid pairs, OT reference set).
    pub paper_size: bool,
}

impl ExperimentOptions {
    pub fn new(seed: u64, scale: Scale) -> Self {
        Self {
            seed,
            scale,
            out_dir: None,
            cache_dir: None,
            threads: 1,
            paper_size: false,
        }
    }

    pub fn with_out_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    fn quick(&self) -> bool {
        self.scale == Scale::Quick
    }

    fn artifact(&self, name: &str) -> Result<Option<PathBuf>> {
        match &self.out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Ok(Some(dir.join(name)))
            }
            None => Ok(None),
        }
    }

    fn write_matrix(&self, name: &str, data: &DMatrix<f64>, time: Option<(&str, &[f64])>) -> Result<()> {
        if let Some(path) = self.artifact(name)? {
            let mut w = BufWriter::new(File::create(path)?);
            write_matrix_csv(&mut w, data, time)?;
            w.flush()?;
        }
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        if let Some(path) = self.artifact(name)? {
            fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
        }
        Ok(())
    }
}

/// Worker count from `SB_THREADS`, defaulting to the available cores.
pub fn threads_from_env() -> usize {
    std::env::var("SB_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Seed for the `k`-th independent run under a root seed.
pub fn derived_seed(seed: u64, k: u32) -> u64 {
    stream_rng(seed, Stream::Chain(k)).next_u64()
}

/// Applies `f` to every item on up to `threads` scoped workers; results
/// keep the input order.
fn fan_out<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let f = &f;
                scope.spawn(move || {
                    (w..items.len())
                        .step_by(threads)
                        .map(|i| (i, f(&items[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

fn fit(ts: &TrainingSet, spec: &KernelSpec) -> Result<BridgeModel> {
    sinkhorn_fit(ts, spec, SinkhornOptions::default())
}

/// Runs a preset by name, writes `summary.json` when an output directory
/// is set and returns the summary.
pub fn run_experiment(name: &str, opts: &ExperimentOptions) -> Result<serde_json::Value> {
    let summary = match name {
        "example-2d" => serde_json::to_value(example_2d(opts)?)?,
        "ring" => serde_json::to_value(ring(opts)?)?,
        "semisphere-3" => serde_json::to_value(semisphere(3, opts)?)?,
        "semisphere-4" => serde_json::to_value(semisphere(4, opts)?)?,
        "semisphere-9" => serde_json::to_value(semisphere(9, opts)?)?,
        "subgrid-additive" => serde_json::to_value(subgrid(CouplingMode::Additive, opts)?)?,
        "subgrid-multiplicative" => serde_json::to_value(subgrid(CouplingMode::Multiplicative, opts)?)?,
        "l63-generate" => serde_json::to_value(l63_generate(opts)?)?,
        other => {
            return Err(Error::invalid(format!(
                "unknown preset {other:?}; available presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    opts.write_json("summary.json", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl CoordStats {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        Self { mean, std, min, max }
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeStats {
    pub scheme: String,
    pub kept: usize,
    pub coordinates: Vec<CoordStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityStats {
    pub scheme: String,
    pub init_low: Vec<f64>,
    pub init_high: Vec<f64>,
    pub kept: usize,
    /// KS distance between the first-coordinate marginals of both chains.
    pub ks_x1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example2dSummary {
    pub preset: String,
    pub seed: u64,
    pub scale: Scale,
    pub m: usize,
    pub nu: f64,
    pub epsilon: f64,
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub sinkhorn_iterations: usize,
    pub sinkhorn_residual: f64,
    pub training: Vec<CoordStats>,
    pub schemes: Vec<SchemeStats>,
    pub ergodicity: ErgodicityStats,
}

/// Singular 2-D Gaussian denoising with all four samplers, plus two chains
/// started at opposite corners of the data.
pub fn example_2d(opts: &ExperimentOptions) -> Result<Example2dSummary> {
    let (m, nu, eps) = (1000, 1e-4, 0.1);
    let n_steps = if opts.quick() { 10_000 } else { 100_000 };
    let burn_in = n_steps / 10;
    let thin = 1;
    let ts = singular_gaussian_2d(m, nu, opts.seed)?;
    opts.write_matrix("training.csv", ts.data(), None)?;
    let model = fit(&ts, &KernelSpec::fixed(&ts, eps)?)?;

    let runs = fan_out(&Scheme::ALL, opts.threads, |&scheme| {
        let cfg = SamplerConfig::new(scheme, n_steps, derived_seed(opts.seed, 0))
            .with_burn_in(burn_in)
            .with_thin(thin);
        run_chain(&model, &cfg)
    })?;
    let mut schemes = Vec::new();
    for (scheme, out) in Scheme::ALL.iter().zip(&runs) {
        opts.write_matrix(&format!("samples_{}.csv", scheme.name()), &out.samples, None)?;
        schemes.push(SchemeStats {
            scheme: scheme.name().to_string(),
            kept: out.samples.ncols(),
            coordinates: rows_of(&out.samples).iter().map(|r| CoordStats::of(r)).collect(),
        });
    }

    let (lo, hi) = ts.bounding_box();
    let inits = [lo.as_slice().to_vec(), hi.as_slice().to_vec()];
    let scheme = Scheme::UnawareSplit;
    let erg_burn = n_steps / 5;
    let chains = fan_out(&[0u32, 1], opts.threads, |&k| {
        let cfg = SamplerConfig::new(scheme, n_steps, derived_seed(opts.seed, 1 + k))
            .with_burn_in(erg_burn)
            .with_thin(1)
            .with_init(Init::Explicit(inits[k as usize].clone()));
        run_chain(&model, &cfg)
    })?;
    let ks_x1 = ks_statistic(&chains[0].coordinate(0), &chains[1].coordinate(0))?;

    Ok(Example2dSummary {
        preset: "example-2d".into(),
        seed: opts.seed,
        scale: opts.scale,
        m,
        nu,
        epsilon: eps,
        n_steps,
        burn_in,
        thin,
        sinkhorn_iterations: model.iterations_used(),
        sinkhorn_residual: model.residual(),
        training: rows_of(ts.data()).iter().map(|r| CoordStats::of(r)).collect(),
        schemes,
        ergodicity: ErgodicityStats {
            scheme: scheme.name().into(),
            init_low: inits[0].clone(),
            init_high: inits[1].clone(),
            kept: chains[0].samples.ncols(),
            ks_x1,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingRun {
    pub scheme: String,
    pub beta: f64,
    pub kept: usize,
    /// Statistics of the noisy half-steps (direct schemes: the states).
    pub radial_std_half: f64,
    pub angular_std_half: f64,
    /// Statistics of the projected states.
    pub radial_std: f64,
    pub angular_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingSummary {
    pub preset: String,
    pub seed: u64,
    pub scale: Scale,
    pub m: usize,
    pub sigma_r: f64,
    pub sigma_theta: f64,
    pub epsilon: f64,
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub training_radial_std: f64,
    pub training_angular_std: f64,
    pub runs: Vec<RingRun>,
}

fn polar_stds(samples: &DMatrix<f64>) -> (f64, f64) {
    let radii: Vec<f64> = samples.column_iter().map(|c| c[0].hypot(c[1])).collect();
    let angles: Vec<f64> = samples.column_iter().map(|c| ring_angle(c.as_slice())).collect();
    (mean_std(&radii).1, mean_std(&angles).1)
}

/// Gaussian ring: constant versus data-aware diffusion at fixed bandwidth,
/// and data-aware diffusion with a variable bandwidth.
pub fn ring(opts: &ExperimentOptions) -> Result<RingSummary> {
    let (m, sigma_r, sigma_theta, eps, beta) = (2000, 0.06, 0.6, 0.009, -0.2);
    let (n_steps, burn_in, thin) = if opts.quick() { (5_000, 1_000, 5) } else { (50_000, 10_000, 10) };
    let ts = gaussian_ring(m, sigma_r, sigma_theta, opts.seed)?;
    opts.write_matrix("training.csv", ts.data(), None)?;
    let (training_radial_std, training_angular_std) = polar_stds(ts.data());
    // start from the data point with the smallest angle, in the sparse tail
    let start = (0..ts.count())
        .min_by(|&a, &b| ring_angle(ts.sample_slice(a)).total_cmp(&ring_angle(ts.sample_slice(b))))
        .expect("nonempty");
    let init = Init::Explicit(ts.sample_slice(start).to_vec());

    let fixed = fit(&ts, &KernelSpec::fixed(&ts, eps)?)?;
    let variable = fit(&ts, &KernelSpec::variable(&ts, eps, beta)?)?;
    let plan = [
        (Scheme::UnawareSplit, 0.0),
        (Scheme::AwareSplit, 0.0),
        (Scheme::AwareSplit, beta),
    ];
    let outs = fan_out(&plan, opts.threads, |&(scheme, b)| {
        let model = if b == 0.0 { &fixed } else { &variable };
        let cfg = SamplerConfig::new(scheme, n_steps, derived_seed(opts.seed, 0))
            .with_burn_in(burn_in)
            .with_thin(thin)
            .with_init(init.clone())
            .with_half_steps(true);
        run_chain(model, &cfg)
    })?;
    let mut runs = Vec::new();
    for ((scheme, b), out) in plan.iter().zip(&outs) {
        let half = out.half_steps.as_ref().expect("half-steps requested");
        let tag = if *b == 0.0 { "fixed" } else { "variable" };
        opts.write_matrix(&format!("samples_{}_{tag}.csv", scheme.name()), &out.samples, None)?;
        opts.write_matrix(&format!("half_steps_{}_{tag}.csv", scheme.name()), half, None)?;
        let (radial_std_half, angular_std_half) = polar_stds(half);
        let (radial_std, angular_std) = polar_stds(&out.samples);
        runs.push(RingRun {
            scheme: scheme.name().into(),
            beta: *b,
            kept: out.samples.ncols(),
            radial_std_half,
            angular_std_half,
            radial_std,
            angular_std,
        });
    }
    Ok(RingSummary {
        preset: "ring".into(),
        seed: opts.seed,
        scale: opts.scale,
        m,
        sigma_r,
        sigma_theta,
        epsilon: eps,
        n_steps,
        burn_in,
        thin,
        training_radial_std,
        training_angular_std,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaResult {
    pub beta: f64,
    pub ot_distance: f64,
    pub transport_cost: f64,
    pub entropy: f64,
    pub plan_residual: f64,
    pub ot_iterations: usize,
    /// Entropic OT of the last coordinate alone.
    pub marginal_ot_distance: f64,
    pub marginal_transport_cost: f64,
    pub ks_last: f64,
    pub sinkhorn_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemisphereSummary {
    pub preset: String,
    pub seed: u64,
    pub scale: Scale,
    pub dim: usize,
    pub m: usize,
    pub epsilon: f64,
    pub scheme: String,
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub reference_size: usize,
    pub lambda: f64,
    pub results: Vec<BetaResult>,
    pub fixed_ot_distance: f64,
    pub best_beta: f64,
    pub best_variable_ot_distance: f64,
}

/// Bandwidth minimizing the OT distance for each dimension.
pub fn semisphere_epsilon(dim: usize) -> Result<f64> {
    match dim {
        3 => Ok(0.008),
        4 => Ok(0.010),
        9 => Ok(0.050),
        _ => Err(Error::invalid(format!("no tuned bandwidth for d = {dim}"))),
    }
}

/// `{0} ∪ {-0.01 · 2ⁿ : n = 0..8}`.
pub fn beta_grid() -> Vec<f64> {
    std::iter::once(0.0).chain((0..9).map(|n| -0.01 * f64::from(1u32 << n))).collect()
}

/// Hyper-semisphere: OT distance of the generated samples to an
/// independent reference set across the variable-bandwidth exponents.
pub fn semisphere(dim: usize, opts: &ExperimentOptions) -> Result<SemisphereSummary> {
    let eps = semisphere_epsilon(dim)?;
    let quick = opts.quick();
    let m = if quick { 300 } else { 1000 };
    let (n_steps, burn_in, thin) = if quick { (5_000, 3_000, 20) } else { (50_000, 30_000, 20) };
    let reference_size = match (quick, opts.paper_size) {
        (true, _) => 500,
        (false, false) => 5_000,
        (false, true) => 50_000,
    };
    let betas = if quick { vec![0.0, -0.01, -0.16] } else { beta_grid() };
    let scheme = Scheme::AwareSplit;
    let ot_cfg = OtConfig::default();

    let ts = hyper_semisphere(&SemisphereConfig::new(m, dim), opts.seed)?;
    let reference = hyper_semisphere_with_rng(
        &SemisphereConfig::new(reference_size, dim),
        &mut stream_rng(opts.seed, Stream::Reference),
    )?;
    opts.write_matrix("training.csv", ts.data(), None)?;
    opts.write_matrix("reference.csv", reference.data(), None)?;
    let ref_last: Vec<f64> = reference.data().row(dim - 1).iter().copied().collect();
    let mut x0 = vec![0.0; dim];
    x0[0] = 1.0;

    let outs = fan_out(&betas, opts.threads, |&beta| -> Result<(BetaResult, ChainOutput)> {
        let spec = if beta == 0.0 {
            KernelSpec::fixed(&ts, eps)?
        } else {
            KernelSpec::variable(&ts, eps, beta)?
        };
        let model = fit(&ts, &spec)?;
        let cfg = SamplerConfig::new(scheme, n_steps, derived_seed(opts.seed, 0))
            .with_burn_in(burn_in)
            .with_thin(thin)
            .with_init(Init::Explicit(x0.clone()));
        let out = run_chain(&model, &cfg)?;
        let ot = entropic_ot(&out.samples, reference.data(), &ot_cfg)?;
        let last = out.coordinate(dim - 1);
        let marginal = marginal_ot_1d(&last, &ref_last, &ot_cfg)?;
        Ok((
            BetaResult {
                beta,
                ot_distance: ot.distance,
                transport_cost: ot.transport_cost,
                entropy: ot.entropy,
                plan_residual: ot.plan_residual,
                ot_iterations: ot.iterations,
                marginal_ot_distance: marginal.distance,
                marginal_transport_cost: marginal.transport_cost,
                ks_last: ks_statistic(&last, &ref_last)?,
                sinkhorn_iterations: model.iterations_used(),
            },
            out,
        ))
    })?;
    let mut results = Vec::new();
    for (k, (res, out)) in outs.into_iter().enumerate() {
        opts.write_matrix(&format!("samples_beta{k}.csv"), &out.samples, None)?;
        results.push(res);
    }
    let fixed_ot_distance = results[0].ot_distance;
    let best = results[1..]
        .iter()
        .min_by(|a, b| a.ot_distance.total_cmp(&b.ot_distance))
        .expect("grid has negative exponents");
    Ok(SemisphereSummary {
        preset: format!("semisphere-{dim}"),
        seed: opts.seed,
        scale: opts.scale,
        dim,
        m,
        epsilon: eps,
        scheme: scheme.name().into(),
        n_steps,
        burn_in,
        thin,
        reference_size,
        lambda: ot_cfg.lambda,
        fixed_ot_distance,
        best_beta: best.beta,
        best_variable_ot_distance: best.ot_distance,
        results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgridSummary {
    pub preset: String,
    pub seed: u64,
    pub scale: Scale,
    pub mode: CouplingMode,
    pub eps_sep: f64,
    pub coupling: f64,
    pub dt: f64,
    pub pairs: usize,
    pub epsilon: f64,
    pub n_inner: usize,
    pub n_outer: usize,
    pub sinkhorn_iterations: usize,
    pub psi_mean: f64,
    pub psi_standard_error: f64,
    pub data: CoordStats,
    pub surrogate: CoordStats,
    pub data_modes: Vec<f64>,
    pub surrogate_modes: Vec<f64>,
    pub surrogate_histogram: Histogram,
}

fn cache_name(cfg: &MultiscaleConfig, seed: u64) -> String {
    let mode = match cfg.mode {
        CouplingMode::Additive => "additive",
        CouplingMode::Multiplicative => "multiplicative",
    };
    format!(
        "multiscale-{mode}-eps{}-c{}-n{}-dt{}-tr{}-pre{}-rtol{}-atol{}-seed{seed}.csv",
        cfg.eps_sep, cfg.coupling, cfg.n_points, cfg.dt_out, cfg.transient, cfg.fast_prerun, cfg.ode.rtol, cfg.ode.atol
    )
}

/// Slow series of the slow–fast system, read from or stored in the cache
/// directory when one is configured.
pub fn cached_multiscale(cfg: &MultiscaleConfig, seed: u64, cache_dir: Option<&Path>) -> Result<Vec<f64>> {
    let path = cache_dir.map(|d| d.join(cache_name(cfg, seed)));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        let rows = read_csv_rows(BufReader::new(File::open(p)?), false)?;
        if rows.len() == cfg.n_points && rows.iter().all(|r| r.len() == 1) {
            return Ok(rows.into_iter().map(|r| r[0]).collect());
        }
    }
    let z = multiscale_l63(cfg, seed)?;
    if let Some(p) = path {
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        // write to a temporary name first so a partial file never looks valid
        let tmp = p.with_extension("partial");
        let mut w = BufWriter::new(File::create(&tmp)?);
        write_matrix_csv(&mut w, &DMatrix::from_row_slice(1, z.len(), &z), None)?;
        w.flush()?;
        drop(w);
        fs::rename(tmp, p)?;
    }
    Ok(z)
}

/// Stochastic subgrid closure for the slow–fast Lorenz system: learn the
/// closure term from data and run the surrogate slow dynamics.
pub fn subgrid(mode: CouplingMode, opts: &ExperimentOptions) -> Result<SubgridSummary> {
    let quick = opts.quick();
    let pairs = match (quick, opts.paper_size) {
        (true, _) => 1_000,
        (false, false) => 20_000,
        (false, true) => 120_000,
    };
    let eps = 0.001;
    let n_inner = if quick { 20 } else { 100 };
    let n_outer = if quick { 500 } else { 20_000 };
    let mut cfg = MultiscaleConfig::new(mode, pairs + 1);
    if quick {
        cfg.transient = 10.0;
    }
    let series = cached_multiscale(&cfg, opts.seed, opts.cache_dir.as_deref())?;
    let times: Vec<f64> = (0..series.len()).map(|k| k as f64 * cfg.dt_out).collect();
    let z_series = DMatrix::from_row_slice(1, series.len(), &series);
    opts.write_matrix("slow_series.csv", &z_series, Some(("t", &times)))?;

    let drift = |z: &[f64]| DVector::from_element(1, SlowFastLorenz::slow_drift(z[0]));
    let closure = extract_closure_samples(&z_series, &drift, cfg.dt_out)?;
    opts.write_matrix("closure_pairs.csv", closure.data(), None)?;
    let psi: Vec<f64> = closure.data().row(1).iter().copied().collect();
    let (psi_mean, psi_std) = mean_std(&psi);

    let model = fit(&closure, &KernelSpec::fixed(&closure, eps)?)?;
    let sinkhorn_iterations = model.iterations_used();
    let cm = ClosureModel::new(model, Box::new(drift), cfg.dt_out)?;
    let mut rng = stream_rng(opts.seed, Stream::Sample);
    let z0 = [series[series.len() - 1]];
    let path = surrogate_simulate(&cm, &z0, n_outer, n_inner, &mut rng)?;
    let out_times: Vec<f64> = (1..=n_outer).map(|k| k as f64 * cfg.dt_out).collect();
    opts.write_matrix("surrogate.csv", &path, Some(("t", &out_times)))?;
    let sim: Vec<f64> = path.row(0).iter().copied().collect();

    Ok(SubgridSummary {
        preset: match mode {
            CouplingMode::Additive => "subgrid-additive".into(),
            CouplingMode::Multiplicative => "subgrid-multiplicative".into(),
        },
        seed: opts.seed,
        scale: opts.scale,
        mode,
        eps_sep: cfg.eps_sep,
        coupling: cfg.coupling,
        dt: cfg.dt_out,
        pairs,
        epsilon: eps,
        n_inner,
        n_outer,
        sinkhorn_iterations,
        psi_mean,
        psi_standard_error: psi_std / (psi.len() as f64).sqrt(),
        data: CoordStats::of(&series),
        surrogate: CoordStats::of(&sim),
        data_modes: histogram_modes(&series)?,
        surrogate_modes: histogram_modes(&sim)?,
        surrogate_histogram: histogram(&sim, 50, None)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L63Summary {
    pub preset: String,
    pub seed: u64,
    pub scale: Scale,
    pub pairs: usize,
    pub dt: f64,
    pub epsilon: f64,
    pub n_inner: usize,
    pub n_steps: usize,
    pub sinkhorn_iterations: usize,
    pub training: Vec<CoordStats>,
    pub generated: Vec<CoordStats>,
    pub inside_bounding_box: bool,
    /// L1 distance between normalized histograms of the third coordinate.
    pub y3_histogram_l1: f64,
    /// Lag-1 autocorrelation of generated first-coordinate increments with
    /// one inner step and with the default number.
    pub increment_autocorrelation_single: f64,
    pub increment_autocorrelation: f64,
}

fn increments_lag1(traj: &DMatrix<f64>) -> Result<f64> {
    let row: Vec<f64> = traj.row(0).iter().copied().collect();
    let inc: Vec<f64> = row.windows(2).map(|w| w[1] - w[0]).collect();
    autocorrelation(&inc, 1)
}

/// Lorenz-63 trajectory generation from consecutive-pair training data.
pub fn l63_generate(opts: &ExperimentOptions) -> Result<L63Summary> {
    let quick = opts.quick();
    let pairs = if quick { 1_000 } else { 10_000 };
    let n_steps = if quick { 200 } else { 2_000 };
    let (dt, eps, n_inner) = (0.1, 0.05, 20);
    let series = lorenz63_series(pairs + 1, dt, 100.0, opts.seed, OdeOptions::default())?;
    let times: Vec<f64> = (0..series.ncols()).map(|k| k as f64 * dt).collect();
    opts.write_matrix("training_series.csv", &series, Some(("t", &times)))?;
    let ts = consecutive_pairs(&series)?;
    let model = fit(&ts, &KernelSpec::fixed(&ts, eps)?)?;

    let mut rng = stream_rng(opts.seed, Stream::Sample);
    let (y0, y1) = random_start_pair(&model, &mut rng);
    let traj = trajectory_generate(&model, &y0, &y1, n_steps, n_inner, &mut rng)?;
    let single = trajectory_generate(&model, &y0, &y1, n_steps, 1, &mut rng)?;
    let out_times: Vec<f64> = (1..=n_steps).map(|k| k as f64 * dt).collect();
    opts.write_matrix("generated.csv", &traj, Some(("t", &out_times)))?;

    let (lo, hi) = ts.bounding_box();
    let inside_bounding_box = traj
        .column_iter()
        .all(|c| (0..3).all(|k| c[k] >= lo[3 + k] && c[k] <= hi[3 + k]));
    let train_y3: Vec<f64> = series.row(2).iter().copied().collect();
    let gen_y3: Vec<f64> = traj.row(2).iter().copied().collect();
    let range = (lo[5], hi[5]);
    let ht = histogram(&train_y3, 30, Some(range))?.frequencies();
    let hg = histogram(&gen_y3, 30, Some(range))?.frequencies();
    let y3_histogram_l1 = ht.iter().zip(&hg).map(|(a, b)| (a - b).abs()).sum();

    Ok(L63Summary {
        preset: "l63-generate".into(),
        seed: opts.seed,
        scale: opts.scale,
        pairs,
        dt,
        epsilon: eps,
        n_inner,
        n_steps,
        sinkhorn_iterations: model.iterations_used(),
        training: rows_of(&series).iter().map(|r| CoordStats::of(r)).collect(),
        generated: rows_of(&traj).iter().map(|r| CoordStats::of(r)).collect(),
        inside_bounding_box,
        y3_histogram_l1,
        increment_autocorrelation_single: increments_lag1(&single)?,
        increment_autocorrelation: increments_lag1(&traj)?,
    })
}
