//! Seeded generators for the synthetic datasets and dynamical systems used
//! in the experiments.

mod ode;

use std::f64::consts::{FRAC_PI_4, PI};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

pub use ode::{integrate_ode, HarmonicOscillator, LinearDecay, Lorenz63, OdeOptions, OdeSystem};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::training::TrainingSet;

/// `x₁ ~ N(0, 1 + ν)`, `x₂ ~ N(0, ν)`, independent.
pub fn singular_gaussian_2d(m: usize, nu: f64, seed: u64) -> Result<TrainingSet> {
    if !(nu >= 0.0) {
        return Err(Error::invalid("nu must be nonnegative"));
    }
    let mut rng = stream_rng(seed, Stream::Dataset);
    let s1 = (1.0 + nu).sqrt();
    let s2 = nu.sqrt();
    let mut data = DMatrix::zeros(2, m);
    for mut col in data.column_iter_mut() {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        col[0] = s1 * a;
        col[1] = s2 * b;
    }
    TrainingSet::new(data)
}

/// Polar samples with `r = 1 + σ_r ξ_r`, `θ = π/4 + σ_θ ξ_θ`.
pub fn gaussian_ring(m: usize, sigma_r: f64, sigma_theta: f64, seed: u64) -> Result<TrainingSet> {
    if !(sigma_r >= 0.0 && sigma_theta >= 0.0) {
        return Err(Error::invalid("ring widths must be nonnegative"));
    }
    let mut rng = stream_rng(seed, Stream::Dataset);
    let mut data = DMatrix::zeros(2, m);
    for mut col in data.column_iter_mut() {
        let xr: f64 = rng.sample(StandardNormal);
        let xt: f64 = rng.sample(StandardNormal);
        let r = 1.0 + sigma_r * xr;
        let theta = FRAC_PI_4 + sigma_theta * xt;
        col[0] = r * theta.cos();
        col[1] = r * theta.sin();
    }
    TrainingSet::new(data)
}

/// Polar coordinates `(r, θ)` of a 2-D sample.
pub fn polar(x: &[f64]) -> (f64, f64) {
    (x[0].hypot(x[1]), x[1].atan2(x[0]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemisphereConfig {
    pub m: usize,
    pub dim: usize,
    /// Stretch of the last Gaussian coordinate before normalizing.
    pub alpha: f64,
    /// Width `w` of the radial factor `1 + U(0, w)`.
    pub radial_noise: f64,
    /// Keep both hemispheres instead of reflecting `x_d ≥ 0`.
    pub full_sphere: bool,
}

impl SemisphereConfig {
    pub fn new(m: usize, dim: usize) -> Self {
        Self {
            m,
            dim,
            alpha: 5.0,
            radial_noise: 0.01,
            full_sphere: false,
        }
    }
}

/// Anisotropic directions on the unit (hemi)sphere with a small radial
/// perturbation.
pub fn hyper_semisphere(cfg: &SemisphereConfig, seed: u64) -> Result<TrainingSet> {
    hyper_semisphere_with_rng(cfg, &mut stream_rng(seed, Stream::Dataset))
}

/// [`hyper_semisphere`] drawing from a caller-supplied generator, e.g. an
/// independent reference stream.
pub fn hyper_semisphere_with_rng<R: Rng + ?Sized>(cfg: &SemisphereConfig, rng: &mut R) -> Result<TrainingSet> {
    if cfg.dim < 2 {
        return Err(Error::invalid("semisphere needs d >= 2"));
    }
    if !(cfg.radial_noise >= 0.0) {
        return Err(Error::invalid("radial noise must be nonnegative"));
    }
    let d = cfg.dim;
    let mut data = DMatrix::zeros(d, cfg.m);
    for mut col in data.column_iter_mut() {
        let norm = loop {
            for k in 0..d {
                col[k] = rng.sample::<f64, _>(StandardNormal);
            }
            col[d - 1] *= cfg.alpha;
            let norm = col.norm();
            if norm > 0.0 {
                break norm;
            }
        };
        let r = if cfg.radial_noise > 0.0 {
            1.0 + rng.sample(Uniform::new(0.0, cfg.radial_noise).expect("positive width"))
        } else {
            1.0
        };
        col.scale_mut(r / norm);
        if !cfg.full_sphere {
            col[d - 1] = col[d - 1].abs();
        }
    }
    TrainingSet::new(data)
}

/// Sampled Lorenz-63 trajectory (`d = 3` rows) after a transient.
pub fn lorenz63_series(n_points: usize, dt: f64, transient: f64, seed: u64, opts: OdeOptions) -> Result<DMatrix<f64>> {
    let sys = Lorenz63::default();
    let mut rng = stream_rng(seed, Stream::Dataset);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let y0 = [
        1.0 + noise.sample(&mut rng),
        1.0 + noise.sample(&mut rng),
        20.0 + noise.sample(&mut rng),
    ];
    let warm = integrate_ode(&sys, &y0, transient, transient.max(dt), opts)?;
    let start: Vec<f64> = warm.column(warm.ncols() - 1).iter().copied().collect();
    let t_end = dt * (n_points.saturating_sub(1)) as f64;
    let series = integrate_ode(&sys, &start, t_end, dt, opts)?;
    Ok(series.columns(0, n_points.min(series.ncols())).into_owned())
}

/// Consecutive-pair training set `x^(i) = (y^(i-1), y^(i))`.
pub fn consecutive_pairs(series: &DMatrix<f64>) -> Result<TrainingSet> {
    let (d, n) = series.shape();
    if n < 2 {
        return Err(Error::invalid("need at least two points for pairs"));
    }
    let mut data = DMatrix::zeros(2 * d, n - 1);
    for i in 1..n {
        let mut col = data.column_mut(i - 1);
        col.rows_mut(0, d).copy_from(&series.column(i - 1));
        col.rows_mut(d, d).copy_from(&series.column(i));
    }
    TrainingSet::new(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMode {
    /// `h(z) = 1`.
    Additive,
    /// `h(z) = z`.
    Multiplicative,
}

/// Slow double-well variable driven by a fast Lorenz-63 system:
///
/// ```text
/// ż = z(1 - z²) + (c/ε) h(z) y₂,     ε² ẏ = L63(y)
/// ```
///
/// with `c = 4/90` by default. State layout is `(z, y₁, y₂, y₃)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowFastLorenz {
    pub mode: CouplingMode,
    pub eps_sep: f64,
    pub coupling: f64,
    fast: Lorenz63,
}

impl SlowFastLorenz {
    pub fn new(mode: CouplingMode, eps_sep: f64, coupling: f64) -> Self {
        Self {
            mode,
            eps_sep,
            coupling,
            fast: Lorenz63 {
                time_scale: eps_sep * eps_sep,
                ..Lorenz63::default()
            },
        }
    }

    /// Known slow drift `F_z(z) = z(1 - z²)`.
    pub fn slow_drift(z: f64) -> f64 {
        z * (1.0 - z * z)
    }
}

impl OdeSystem for SlowFastLorenz {
    fn dim(&self) -> usize {
        4
    }

    #[inline]
    fn rhs(&self, _t: f64, s: &[f64], d: &mut [f64]) {
        let h = match self.mode {
            CouplingMode::Additive => 1.0,
            CouplingMode::Multiplicative => s[0],
        };
        d[0] = Self::slow_drift(s[0]) + self.coupling / self.eps_sep * h * s[2];
        self.fast.field(&s[1..4], &mut d[1..4]);
    }

    fn stiffness_scale(&self) -> f64 {
        self.eps_sep * self.eps_sep
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiscaleConfig {
    pub mode: CouplingMode,
    pub eps_sep: f64,
    pub coupling: f64,
    /// Number of slow samples returned (`M + 1` for `M` closure pairs).
    pub n_points: usize,
    pub dt_out: f64,
    /// Slow time discarded before sampling starts.
    pub transient: f64,
    /// Lorenz time units the fast system runs alone to reach its attractor.
    pub fast_prerun: f64,
    pub ode: OdeOptions,
}

impl MultiscaleConfig {
    pub fn new(mode: CouplingMode, n_points: usize) -> Self {
        Self {
            mode,
            eps_sep: 0.01,
            coupling: 4.0 / 90.0,
            n_points,
            dt_out: 0.1,
            transient: 100.0,
            fast_prerun: 10.0,
            ode: OdeOptions::default(),
        }
    }
}

/// Slow series `z(t_k)` of the slow–fast Lorenz system sampled every
/// `dt_out` after the transient.
pub fn multiscale_l63(cfg: &MultiscaleConfig, seed: u64) -> Result<Vec<f64>> {
    if !(cfg.eps_sep > 0.0) {
        return Err(Error::invalid("eps_sep must be positive"));
    }
    let mut rng = stream_rng(seed, Stream::Dataset);
    let y0 = [
        1.0 + rng.sample::<f64, _>(StandardNormal),
        1.0 + rng.sample::<f64, _>(StandardNormal),
        20.0 + rng.sample::<f64, _>(StandardNormal),
    ];
    let z0 = rng.sample(Uniform::new(-0.9, 0.9).expect("valid range"));
    let pre = integrate_ode(&Lorenz63::default(), &y0, cfg.fast_prerun, cfg.fast_prerun.max(1e-3), cfg.ode)?;
    let fast: Vec<f64> = pre.column(pre.ncols() - 1).iter().copied().collect();
    let sys = SlowFastLorenz::new(cfg.mode, cfg.eps_sep, cfg.coupling);
    let start = [z0, fast[0], fast[1], fast[2]];
    let state = if cfg.transient > 0.0 {
        let warm = integrate_ode(&sys, &start, cfg.transient, cfg.transient, cfg.ode)?;
        warm.column(warm.ncols() - 1).iter().copied().collect::<Vec<_>>()
    } else {
        start.to_vec()
    };
    let t_end = cfg.dt_out * cfg.n_points.saturating_sub(1) as f64;
    let run = integrate_ode(&sys, &state, t_end, cfg.dt_out, cfg.ode)?;
    Ok(run.row(0).iter().take(cfg.n_points).copied().collect())
}

/// Angle of a ring sample measured from the ring's center line, in `(-π, π]`.
pub fn ring_angle(x: &[f64]) -> f64 {
    let (_, theta) = polar(x);
    let mut a = theta - FRAC_PI_4;
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a + FRAC_PI_4
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_of(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
        let n = v.clone().count() as f64;
        let mean = v.clone().sum::<f64>() / n;
        let var = v.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    #[test]
    fn singular_gaussian_properties() {
        let zero = singular_gaussian_2d(200, 0.0, 1).unwrap();
        assert!(zero.data().row(1).iter().all(|v| *v == 0.0));
        let ts = singular_gaussian_2d(1000, 1e-4, 5).unwrap();
        let (_, s2) = std_of(ts.data().row(1).iter().copied());
        assert!((0.007..=0.013).contains(&s2), "x2 std {s2}");
        assert_eq!(ts, singular_gaussian_2d(1000, 1e-4, 5).unwrap());
        assert_ne!(ts, singular_gaussian_2d(1000, 1e-4, 6).unwrap());
    }

    #[test]
    fn ring_properties() {
        let flat = gaussian_ring(10, 0.0, 0.0, 3).unwrap();
        for c in flat.data().column_iter() {
            assert!((c[0] - FRAC_PI_4.cos()).abs() < 1e-15 && (c[1] - FRAC_PI_4.sin()).abs() < 1e-15);
        }
        let ts = gaussian_ring(2000, 0.06, 0.6, 7).unwrap();
        let radii = ts.data().column_iter().map(|c| c[0].hypot(c[1]));
        let (mean_r, _) = std_of(radii);
        assert!((0.99..=1.01).contains(&mean_r));
        let angles = ts.data().column_iter().map(|c| ring_angle(c.as_slice()));
        let (_, std_t) = std_of(angles);
        assert!((std_t - 0.6).abs() <= 0.06, "angular std {std_t}");
    }

    #[test]
    fn semisphere_norms_and_sign() {
        let exact = hyper_semisphere(
            &SemisphereConfig {
                radial_noise: 0.0,
                ..SemisphereConfig::new(300, 4)
            },
            2,
        )
        .unwrap();
        assert!(exact.data().column_iter().all(|c| (c.norm() - 1.0).abs() < 1e-12));
        let ts = hyper_semisphere(&SemisphereConfig::new(1000, 3), 2).unwrap();
        for c in ts.data().column_iter() {
            assert!((1.0..=1.01).contains(&c.norm()));
            assert!(c[2] >= 0.0);
        }
        let full = hyper_semisphere(
            &SemisphereConfig {
                full_sphere: true,
                ..SemisphereConfig::new(1000, 3)
            },
            2,
        )
        .unwrap();
        assert!(full.data().row(2).iter().any(|v| *v < 0.0));
        assert!(hyper_semisphere(&SemisphereConfig::new(10, 1), 0).is_err());
    }

    #[test]
    fn uncoupled_slow_variable_relaxes_to_well() {
        let cfg = MultiscaleConfig {
            coupling: 0.0,
            transient: 0.0,
            eps_sep: 0.1,
            n_points: 201,
            ..MultiscaleConfig::new(CouplingMode::Additive, 0)
        };
        let z = multiscale_l63(&cfg, 4).unwrap();
        let last = *z.last().unwrap();
        assert!((last.abs() - 1.0).abs() < 1e-6, "z(20) = {last}");
        assert_eq!(last.signum(), z[0].signum());
    }

    #[test]
    fn consecutive_pairs_layout() {
        let series = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        let pairs = consecutive_pairs(&series).unwrap();
        assert_eq!(pairs.count(), 3);
        assert_eq!(pairs.sample_slice(1), &[2.0, 3.0]);
    }

    #[test]
    fn lorenz_series_is_bounded_and_seeded() {
        let a = lorenz63_series(2000, 0.1, 10.0, 1, OdeOptions::default()).unwrap();
        assert_eq!(a.shape(), (3, 2000));
        assert!(a.amax() <= 100.0);
        let b = lorenz63_series(2000, 0.1, 10.0, 1, OdeOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
