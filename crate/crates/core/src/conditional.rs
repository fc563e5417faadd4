//! Potential-tilted sampling, regularized minimization, ABC-style
//! conditional sampling and the sequential surrogate loops built on the
//! bridge projection `m(x; ε)`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bridge::BridgeModel;
use crate::error::{Error, Result};
use crate::kernel::KernelMode;
use crate::rng::standard_normal;
use crate::sampler::{
    aware_split_update, drive, unaware_noise, unaware_split_update, ChainOutput, SamplerConfig,
    Transition,
};
use crate::training::TrainingSet;

pub type ScalarField = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorField = Box<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

/// Relative tolerance for the finite-difference gradient check.
pub const GRADIENT_RTOL: f64 = 1e-5;

/// A potential `V` and its gradient.
pub struct PotentialSpec {
    dim: usize,
    value: ScalarField,
    gradient: VectorField,
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialSpec").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl PotentialSpec {
    /// Registers `V` and `∇V`, checking the gradient against central
    /// differences of `V` at every probe point.
    pub fn new(dim: usize, value: ScalarField, gradient: VectorField, probes: &[Vec<f64>]) -> Result<Self> {
        let spec = Self { dim, value, gradient };
        for x in probes {
            spec.check_gradient(x)?;
        }
        Ok(spec)
    }

    /// `V ≡ 0`.
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            value: Box::new(|_| 0.0),
            gradient: Box::new(move |_| DVector::zeros(dim)),
        }
    }

    /// `V(x) = ½ κ ‖x - c‖²`.
    pub fn quadratic(center: Vec<f64>, kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::invalid("quadratic stiffness must be finite and nonnegative"));
        }
        let dim = center.len();
        let c = DVector::from_vec(center);
        let c2 = c.clone();
        Ok(Self {
            dim,
            value: Box::new(move |x| 0.5 * kappa * (DVector::from_column_slice(x) - &c).norm_squared()),
            gradient: Box::new(move |x| (DVector::from_column_slice(x) - &c2) * kappa),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    /// `∇V(x)`; non-finite components are reported with the location.
    pub fn gradient(&self, x: &[f64]) -> Result<DVector<f64>> {
        let g = (self.gradient)(x);
        if g.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: g.len(),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteField {
                what: "potential gradient",
                point: x.to_vec(),
            });
        }
        Ok(g)
    }

    /// Compares `∇V(x)` with central differences; the error is measured
    /// relative to `max(‖∇V‖∞, 1)`.
    pub fn check_gradient(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        let g = self.gradient(x)?;
        let mut probe = x.to_vec();
        let mut worst = 0.0f64;
        for k in 0..self.dim {
            let h = f64::EPSILON.cbrt() * x[k].abs().max(1.0);
            probe[k] = x[k] + h;
            let up = self.value(&probe);
            probe[k] = x[k] - h;
            let down = self.value(&probe);
            probe[k] = x[k];
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - g[k]).abs());
        }
        let rel = worst / g.amax().max(1.0);
        if !(rel <= GRADIENT_RTOL) {
            return Err(Error::GradientMismatch(rel));
        }
        Ok(())
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// One tilted split step with the draw `z`:
/// `x½ = x - ε∇V(x) + √(2ε) z`, `x' = m(x½; ε)`.
pub fn bayesian_update(model: &BridgeModel, pot: &PotentialSpec, x: &DVector<f64>, z: &DVector<f64>) -> Result<Transition> {
    if model.spec().mode() != KernelMode::Fixed {
        return Err(Error::UnsupportedMode { required: "fixed-bandwidth" });
    }
    check_dim(model.dim(), pot.dim())?;
    let eps = model.epsilon();
    let grad = pot.gradient(x.as_slice())?;
    let half = (x - grad * eps) + unaware_noise(model, x, z)? * eps.sqrt();
    let (weights, state) = model.mean_and_weights(half.as_slice())?;
    Ok(Transition {
        state,
        weights,
        half_step: Some(half),
    })
}

/// Chain targeting approximately `e^{-V} π`. `cfg.scheme` and
/// `cfg.delta_tau` are ignored.
pub fn bayesian_chain(model: &BridgeModel, pot: &PotentialSpec, cfg: &SamplerConfig) -> Result<ChainOutput> {
    if model.spec().mode() != KernelMode::Fixed {
        return Err(Error::UnsupportedMode { required: "fixed-bandwidth" });
    }
    check_dim(model.dim(), pot.dim())?;
    let d = model.dim();
    drive(model, cfg, |x, rng| {
        let z = standard_normal(rng, d);
        bayesian_update(model, pot, x, &z)
    })
}

/// Iterates `x ← m(x - ε∇V(x); ε)` and returns all iterates as columns,
/// starting with `x0`.
pub fn regularized_minimize(model: &BridgeModel, pot: &PotentialSpec, x0: &[f64], n_iter: usize) -> Result<DMatrix<f64>> {
    check_dim(model.dim(), x0.len())?;
    check_dim(model.dim(), pot.dim())?;
    let eps = model.epsilon();
    let mut out = DMatrix::zeros(x0.len(), n_iter + 1);
    out.column_mut(0).copy_from_slice(x0);
    let mut x = DVector::from_column_slice(x0);
    for n in 1..=n_iter {
        let grad = pot.gradient(x.as_slice())?;
        let half = &x - grad * eps;
        x = model.conditional_mean(half.as_slice())?;
        out.set_column(n, &x);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    #[default]
    Unaware,
    Aware,
}

/// Clamped block `y` (fixed to `y*`) and free block `z` of a joint model.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalSpec {
    y_indices: Vec<usize>,
    z_indices: Vec<usize>,
    y_star: Vec<f64>,
    pub n_inner: usize,
    pub noise_mode: NoiseMode,
    /// Restart the inner chain from the initial state every outer step
    /// instead of carrying it forward.
    pub reset_inner: bool,
}

impl ConditionalSpec {
    /// `z` is the complement of `y_indices` in `0..dim`.
    pub fn new(dim: usize, y_indices: Vec<usize>, y_star: Vec<f64>, n_inner: usize) -> Result<Self> {
        if y_star.len() != y_indices.len() {
            return Err(Error::DimensionMismatch {
                expected: y_indices.len(),
                actual: y_star.len(),
            });
        }
        if n_inner == 0 {
            return Err(Error::invalid("n_inner must be at least 1"));
        }
        let mut seen = vec![false; dim];
        for &i in &y_indices {
            if i >= dim {
                return Err(Error::IndexOutOfRange { index: i, count: dim });
            }
            if seen[i] {
                return Err(Error::invalid(format!("clamped index {i} repeated")));
            }
            seen[i] = true;
        }
        let z_indices = (0..dim).filter(|&i| !seen[i]).collect();
        Ok(Self {
            y_indices,
            z_indices,
            y_star,
            n_inner,
            noise_mode: NoiseMode::Unaware,
            reset_inner: false,
        })
    }

    pub fn with_noise_mode(mut self, mode: NoiseMode) -> Self {
        self.noise_mode = mode;
        self
    }

    pub fn with_reset_inner(mut self, reset: bool) -> Self {
        self.reset_inner = reset;
        self
    }

    pub fn y_indices(&self) -> &[usize] {
        &self.y_indices
    }

    pub fn z_indices(&self) -> &[usize] {
        &self.z_indices
    }

    pub fn y_star(&self) -> &[f64] {
        &self.y_star
    }

    pub fn dim(&self) -> usize {
        self.y_indices.len() + self.z_indices.len()
    }

    /// Overwrites the `y` block with `y*`.
    pub fn clamp(&self, x: &mut DVector<f64>) {
        for (&i, &y) in self.y_indices.iter().zip(&self.y_star) {
            x[i] = y;
        }
    }

    /// Selects the `z` block of each column.
    pub fn project_z(&self, samples: &DMatrix<f64>) -> DMatrix<f64> {
        samples.select_rows(self.z_indices.iter())
    }
}

/// Split step from `x̂`, adding noise to every component.
fn split_from(model: &BridgeModel, x_hat: &DVector<f64>, mode: NoiseMode, z: &DVector<f64>) -> Result<Transition> {
    match mode {
        NoiseMode::Unaware => unaware_split_update(model, x_hat, z),
        NoiseMode::Aware => aware_split_update(model, x_hat, z),
    }
}

/// One inner step: clamp `y` to `y*`, then take a split step with the draw
/// `z`. Returns the clamped point and the transition.
pub fn conditional_update(
    model: &BridgeModel,
    spec: &ConditionalSpec,
    x: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<(DVector<f64>, Transition)> {
    check_dim(model.dim(), spec.dim())?;
    let mut x_hat = x.clone();
    spec.clamp(&mut x_hat);
    let tr = split_from(model, &x_hat, spec.noise_mode, z)?;
    Ok((x_hat, tr))
}

/// Samples `z | y = y*`. Each outer step runs `spec.n_inner` clamped split
/// steps; burn-in and thinning in `cfg` count outer steps. Returned samples
/// are the `z` blocks.
pub fn conditional_chain(model: &BridgeModel, spec: &ConditionalSpec, cfg: &SamplerConfig) -> Result<ChainOutput> {
    check_dim(model.dim(), spec.dim())?;
    let d = model.dim();
    let mut start: Option<DVector<f64>> = None;
    let mut out = drive(model, cfg, |x, rng: &mut ChaCha8Rng| {
        let first = start.get_or_insert_with(|| x.clone());
        let mut state = if spec.reset_inner { first.clone() } else { x.clone() };
        let mut last = None;
        for _ in 0..spec.n_inner {
            let z = standard_normal(rng, d);
            let (_, tr) = conditional_update(model, spec, &state, &z)?;
            state = tr.state.clone();
            last = Some(tr);
        }
        Ok(last.expect("n_inner >= 1"))
    })?;
    out.samples = spec.project_z(&out.samples);
    Ok(out)
}

/// Closure pairs `(z^(i-1), ψ^(i))` with
/// `ψ^(i) = z^(i) - z^(i-1) - F(z^(i-1)) Δt`.
pub fn extract_closure_samples(
    series: &DMatrix<f64>,
    drift: &dyn Fn(&[f64]) -> DVector<f64>,
    dt: f64,
) -> Result<TrainingSet> {
    let (d, n) = series.shape();
    if n < 2 {
        return Err(Error::invalid("closure extraction needs at least two time points"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    let mut data = DMatrix::zeros(2 * d, n - 1);
    for i in 1..n {
        let prev = series.column(i - 1);
        let f = drift(prev.as_slice());
        check_dim(d, f.len())?;
        let mut col = data.column_mut(i - 1);
        for k in 0..d {
            col[k] = prev[k];
            col[d + k] = series[(k, i)] - prev[k] - f[k] * dt;
        }
    }
    TrainingSet::new(data)
}

/// Bridge model over closure pairs together with the known drift.
pub struct ClosureModel {
    bridge: BridgeModel,
    drift: VectorField,
    dt: f64,
}

impl fmt::Debug for ClosureModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosureModel")
            .field("dim", &self.bridge.dim())
            .field("dt", &self.dt)
            .finish_non_exhaustive()
    }
}

impl ClosureModel {
    pub fn new(bridge: BridgeModel, drift: VectorField, dt: f64) -> Result<Self> {
        if bridge.dim() % 2 != 0 {
            return Err(Error::invalid("closure model needs an even dimension"));
        }
        if !(dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        Ok(Self { bridge, drift, dt })
    }

    pub fn bridge(&self) -> &BridgeModel {
        &self.bridge
    }

    pub fn slow_dim(&self) -> usize {
        self.bridge.dim() / 2
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn drift_at(&self, z: &[f64]) -> Result<DVector<f64>> {
        let f = (self.drift)(z);
        check_dim(z.len(), f.len())?;
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteField {
                what: "drift",
                point: z.to_vec(),
            });
        }
        Ok(f)
    }
}

/// Runs `n_inner` split steps with the first block clamped to `head`,
/// starting from and updating `state`. Returns the second block.
fn decorrelate<R: Rng + ?Sized>(
    model: &BridgeModel,
    head: &[f64],
    state: &mut DVector<f64>,
    n_inner: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let k = head.len();
    let d = model.dim();
    for _ in 0..n_inner {
        state.rows_mut(0, k).copy_from_slice(head);
        let z = standard_normal(rng, d);
        *state = unaware_split_update(model, state, &z)?.state;
    }
    Ok(state.rows(k, d - k).into_owned())
}

fn random_pair_tail<R: Rng + ?Sized>(model: &BridgeModel, rng: &mut R) -> DVector<f64> {
    let j = rng.random_range(0..model.count());
    model.training().sample(j).into_owned()
}

/// Surrogate slow dynamics `z_k = z_{k-1} + F(z_{k-1}) Δt + ψ_k`, where
/// `ψ_k` is drawn by `n_inner` clamped split steps. The inner state is
/// carried across outer steps. Returns `z_1, …, z_{n_outer}` as columns.
pub fn surrogate_simulate<R: Rng + ?Sized>(
    cm: &ClosureModel,
    z0: &[f64],
    n_outer: usize,
    n_inner: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let ds = cm.slow_dim();
    check_dim(ds, z0.len())?;
    if n_inner == 0 {
        return Err(Error::invalid("n_inner must be at least 1"));
    }
    let mut state = random_pair_tail(&cm.bridge, rng);
    let mut z = DVector::from_column_slice(z0);
    let mut out = DMatrix::zeros(ds, n_outer);
    for k in 0..n_outer {
        let psi = decorrelate(&cm.bridge, z.as_slice(), &mut state, n_inner, rng)?;
        let f = cm.drift_at(z.as_slice())?;
        z = &z + f * cm.dt + psi;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k + 1 });
        }
        out.set_column(k, &z);
    }
    Ok(out)
}

/// Sequential generation from a model over consecutive pairs
/// `(y^(i-1), y^(i))`: `y_{k+1}` is the second block after `n_inner`
/// clamped split steps with the first block fixed to `y_k`. Starts from the
/// pair `(y0, y1)` and returns the `n_steps` generated states.
pub fn trajectory_generate<R: Rng + ?Sized>(
    model: &BridgeModel,
    y0: &[f64],
    y1: &[f64],
    n_steps: usize,
    n_inner: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let k = y0.len();
    check_dim(model.dim(), 2 * k)?;
    check_dim(k, y1.len())?;
    if n_inner == 0 {
        return Err(Error::invalid("n_inner must be at least 1"));
    }
    let mut state = DVector::from_iterator(2 * k, y0.iter().chain(y1).copied());
    let mut y = DVector::from_column_slice(y1);
    let mut out = DMatrix::zeros(k, n_steps);
    for s in 0..n_steps {
        y = decorrelate(model, y.as_slice(), &mut state, n_inner, rng)?;
        out.set_column(s, &y);
    }
    Ok(out)
}

/// Random training pair, split into its two blocks.
pub fn random_start_pair<R: Rng + ?Sized>(model: &BridgeModel, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let x = random_pair_tail(model, rng);
    let k = x.len() / 2;
    (x.as_slice()[..k].to_vec(), x.as_slice()[k..].to_vec())
}
