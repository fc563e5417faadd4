//! Langevin samplers driven by the bridge's conditional mean.
//!
//! Four update rules are provided. With `Ξ_n ~ N(0, Δτ I)` for the direct
//! schemes and `Ξ_n ~ N(0, ε I)` for the split-step schemes:
//!
//! ```text
//! unaware direct:  X' = X + Δτ (m(X) - X)/ε + sqrt(2K(X)) Ξ
//! aware direct:    X' = X + Δτ (m(X) - X)/ε + sqrt(C(X)) Ξ
//! unaware split:   X' = m(X + sqrt(2K(X)) Ξ)
//! aware split:     X' = m(X + sqrt(C(X)) Ξ)
//! ```
//!
//! Split-step outputs are convex combinations of the training samples, so
//! those chains cannot leave the convex hull of the data for any ε.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bridge::{BridgeModel, ProbabilityVector};
use crate::error::{Error, Result};
use crate::kernel::KernelMode;
use crate::rng::{standard_normal, stream_rng, Stream};
use crate::training::write_matrix_csv;

pub use crate::linalg::psd_sqrt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    UnawareDirect,
    AwareDirect,
    UnawareSplit,
    AwareSplit,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::UnawareDirect,
        Scheme::AwareDirect,
        Scheme::UnawareSplit,
        Scheme::AwareSplit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::UnawareDirect => "unaware-direct",
            Scheme::AwareDirect => "aware-direct",
            Scheme::UnawareSplit => "unaware-split",
            Scheme::AwareSplit => "aware-split",
        }
    }

    pub fn is_split(self) -> bool {
        matches!(self, Scheme::UnawareSplit | Scheme::AwareSplit)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scheme {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    RandomTrainingPoint,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub scheme: Scheme,
    /// Virtual time step Δτ of the direct schemes; `None` means ε.
    pub delta_tau: Option<f64>,
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub init: Init,
    /// Also keep the noisy half-step `X_{n+1/2}` of split schemes.
    pub keep_half_steps: bool,
}

impl SamplerConfig {
    /// Burn-in of 60% of the chain and thinning by 20.
    pub fn new(scheme: Scheme, n_steps: usize, seed: u64) -> Self {
        Self {
            scheme,
            delta_tau: None,
            n_steps,
            burn_in: n_steps * 3 / 5,
            thin: 20,
            seed,
            init: Init::RandomTrainingPoint,
            keep_half_steps: false,
        }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_thin(mut self, thin: usize) -> Self {
        self.thin = thin;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_half_steps(mut self, keep: bool) -> Self {
        self.keep_half_steps = keep;
        self
    }

    pub fn with_delta_tau(mut self, delta_tau: f64) -> Self {
        self.delta_tau = Some(delta_tau);
        self
    }

    /// Number of samples the chain keeps.
    pub fn kept(&self) -> usize {
        self.n_steps.saturating_sub(self.burn_in) / self.thin.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::invalid("thin must be >= 1"));
        }
        if self.burn_in + self.thin > self.n_steps {
            return Err(Error::invalid(format!(
                "no samples kept: burn_in {} + thin {} exceeds n_steps {}",
                self.burn_in, self.thin, self.n_steps
            )));
        }
        if let Some(dt) = self.delta_tau {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::invalid("delta_tau must be positive"));
            }
        }
        Ok(())
    }
}

/// One sampler update: the new state and the probability vector of the
/// last conditional-mean evaluation.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: DVector<f64>,
    pub weights: ProbabilityVector,
    /// Noisy point fed to the projection, for split schemes.
    pub half_step: Option<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub max_weight: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// `d × N_kept`, one column per kept sample.
    pub samples: DMatrix<f64>,
    /// Half-steps at the kept indices, when requested. Direct schemes
    /// have none and repeat the kept state.
    pub half_steps: Option<DMatrix<f64>>,
    pub diagnostics: Vec<StepRecord>,
    pub seed: u64,
}

impl ChainOutput {
    pub fn write_samples_csv<W: Write>(&self, w: W) -> Result<()> {
        write_matrix_csv(w, &self.samples, None)
    }

    pub fn write_diagnostics_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in &self.diagnostics {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Kept values of coordinate `k`.
    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        self.samples.row(k).iter().copied().collect()
    }
}

fn check_state(model: &BridgeModel, x: &DVector<f64>) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// `sqrt(2K(x)) z`.
pub(crate) fn unaware_noise(model: &BridgeModel, x: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let spec = model.spec();
    match spec.mode() {
        KernelMode::EmpiricalCovariance => {
            let root = psd_sqrt(&(spec.preconditioner(x.as_slice()) * 2.0))?;
            Ok(root * z)
        }
        _ => Ok(z * (2.0 * spec.rho_at(x.as_slice())).sqrt()),
    }
}

/// Unaware direct update with the standard-normal draw `z` supplied.
pub fn unaware_direct_update(
    model: &BridgeModel,
    x: &DVector<f64>,
    delta_tau: f64,
    z: &DVector<f64>,
) -> Result<Transition> {
    check_state(model, x)?;
    let (weights, m) = model.mean_and_weights(x.as_slice())?;
    let drift = (m - x) * (delta_tau / model.epsilon());
    let noise = unaware_noise(model, x, z)? * delta_tau.sqrt();
    Ok(Transition {
        state: x + drift + noise,
        weights,
        half_step: None,
    })
}

pub fn aware_direct_update(
    model: &BridgeModel,
    x: &DVector<f64>,
    delta_tau: f64,
    z: &DVector<f64>,
) -> Result<Transition> {
    check_state(model, x)?;
    let mom = model.moments(x.as_slice())?;
    let drift = (&mom.mean - x) * (delta_tau / model.epsilon());
    let noise = psd_sqrt(&mom.covariance)? * z * delta_tau.sqrt();
    Ok(Transition {
        state: x + drift + noise,
        weights: mom.p,
        half_step: None,
    })
}

pub fn unaware_split_update(model: &BridgeModel, x: &DVector<f64>, z: &DVector<f64>) -> Result<Transition> {
    check_state(model, x)?;
    let half = x + unaware_noise(model, x, z)? * model.epsilon().sqrt();
    let (weights, state) = model.mean_and_weights(half.as_slice())?;
    Ok(Transition {
        state,
        weights,
        half_step: Some(half),
    })
}

pub fn aware_split_update(model: &BridgeModel, x: &DVector<f64>, z: &DVector<f64>) -> Result<Transition> {
    check_state(model, x)?;
    let cov = model.conditional_covariance(x.as_slice())?;
    let half = x + psd_sqrt(&cov)? * z * model.epsilon().sqrt();
    let (weights, state) = model.mean_and_weights(half.as_slice())?;
    Ok(Transition {
        state,
        weights,
        half_step: Some(half),
    })
}

pub fn step_unaware_direct<R: Rng + ?Sized>(
    model: &BridgeModel,
    x: &DVector<f64>,
    delta_tau: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let z = standard_normal(rng, model.dim());
    Ok(unaware_direct_update(model, x, delta_tau, &z)?.state)
}

pub fn step_aware_direct<R: Rng + ?Sized>(
    model: &BridgeModel,
    x: &DVector<f64>,
    delta_tau: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let z = standard_normal(rng, model.dim());
    Ok(aware_direct_update(model, x, delta_tau, &z)?.state)
}

pub fn step_unaware_split<R: Rng + ?Sized>(
    model: &BridgeModel,
    x: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let z = standard_normal(rng, model.dim());
    Ok(unaware_split_update(model, x, &z)?.state)
}

pub fn step_aware_split<R: Rng + ?Sized>(
    model: &BridgeModel,
    x: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let z = standard_normal(rng, model.dim());
    Ok(aware_split_update(model, x, &z)?.state)
}

/// One update of `scheme` with an explicit draw.
pub fn update(
    model: &BridgeModel,
    scheme: Scheme,
    x: &DVector<f64>,
    delta_tau: f64,
    z: &DVector<f64>,
) -> Result<Transition> {
    match scheme {
        Scheme::UnawareDirect => unaware_direct_update(model, x, delta_tau, z),
        Scheme::AwareDirect => aware_direct_update(model, x, delta_tau, z),
        Scheme::UnawareSplit => unaware_split_update(model, x, z),
        Scheme::AwareSplit => aware_split_update(model, x, z),
    }
}

pub(crate) fn initial_state(model: &BridgeModel, init: &Init, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
    match init {
        Init::RandomTrainingPoint => {
            let j = rng.random_range(0..model.count());
            Ok(model.training().sample(j).into_owned())
        }
        Init::Explicit(x) => {
            if x.len() != model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.dim(),
                    actual: x.len(),
                });
            }
            Ok(DVector::from_column_slice(x))
        }
    }
}

/// Runs a chain with burn-in and thinning using `step` for each update.
pub(crate) fn drive<F>(model: &BridgeModel, cfg: &SamplerConfig, mut step: F) -> Result<ChainOutput>
where
    F: FnMut(&DVector<f64>, &mut ChaCha8Rng) -> Result<Transition>,
{
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, Stream::Sample);
    let mut x = initial_state(model, &cfg.init, &mut rng)?;
    let d = model.dim();
    let mut kept = Vec::with_capacity(cfg.kept() * d);
    let mut halves = Vec::with_capacity(if cfg.keep_half_steps { cfg.kept() * d } else { 0 });
    let mut diagnostics = Vec::with_capacity(cfg.n_steps);
    for n in 1..=cfg.n_steps {
        let tr = step(&x, &mut rng)?;
        if tr.state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: n });
        }
        diagnostics.push(StepRecord {
            step: n,
            max_weight: tr.weights.max_weight(),
            entropy: tr.weights.entropy(),
        });
        if n > cfg.burn_in && (n - cfg.burn_in) % cfg.thin == 0 {
            kept.extend_from_slice(tr.state.as_slice());
            if cfg.keep_half_steps {
                halves.extend_from_slice(tr.half_step.as_ref().unwrap_or(&tr.state).as_slice());
            }
        }
        x = tr.state;
    }
    let n_kept = kept.len() / d;
    Ok(ChainOutput {
        samples: DMatrix::from_vec(d, n_kept, kept),
        half_steps: cfg.keep_half_steps.then(|| DMatrix::from_vec(d, n_kept, halves)),
        diagnostics,
        seed: cfg.seed,
    })
}

/// Runs the configured sampler. Deterministic in `(model, cfg)`.
pub fn run_chain(model: &BridgeModel, cfg: &SamplerConfig) -> Result<ChainOutput> {
    let delta_tau = cfg.delta_tau.unwrap_or_else(|| model.epsilon());
    let d = model.dim();
    drive(model, cfg, |x, rng| {
        let z = standard_normal(rng, d);
        update(model, cfg.scheme, x, delta_tau, &z)
    })
}
