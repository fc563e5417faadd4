//! Gaussian reference kernel over the training samples.
//!
//! Entries are
//!
//! ```text
//! t(x, y) = exp( -(x - y)ᵀ (K(x) + K(y))⁻¹ (x - y) / (2ε) )
//! ```
//!
//! with `K = I` (fixed bandwidth), `K(x) = ρ(x) I` (variable bandwidth,
//! `ρ(x) = (π(x)/Z)^β` from a KDE), or `K = Σ_M` (empirical covariance).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::{sq_dist, DensityEstimate};
use crate::linalg::{empirical_covariance, log_sum_exp};
use crate::training::TrainingSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    Fixed,
    VariableBandwidth,
    EmpiricalCovariance,
}

impl KernelMode {
    pub(crate) fn code(self) -> u8 {
        match self {
            KernelMode::Fixed => 0,
            KernelMode::VariableBandwidth => 1,
            KernelMode::EmpiricalCovariance => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(KernelMode::Fixed),
            1 => Some(KernelMode::VariableBandwidth),
            2 => Some(KernelMode::EmpiricalCovariance),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    epsilon: f64,
    mode: KernelMode,
    beta: f64,
    rho: Vec<f64>,
    log_z: f64,
    density: Option<DensityEstimate>,
    /// Σ_M and the inverse of its Cholesky factor, covariance mode only.
    covariance: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")))
    }
}

impl KernelSpec {
    /// `K = I`.
    pub fn fixed(ts: &TrainingSet, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self {
            epsilon,
            mode: KernelMode::Fixed,
            beta: 0.0,
            rho: vec![1.0; ts.count()],
            log_z: 0.0,
            density: None,
            covariance: None,
        })
    }

    /// `K(x) = ρ(x) I` with `ρ(x) = (π(x)/Z)^β` and a KDE for `π`.
    pub fn variable(ts: &TrainingSet, epsilon: f64, beta: f64) -> Result<Self> {
        let kde = DensityEstimate::fit(ts)?;
        Self::variable_with_density(ts, epsilon, beta, kde)
    }

    pub fn variable_with_density(
        ts: &TrainingSet,
        epsilon: f64,
        beta: f64,
        density: DensityEstimate,
    ) -> Result<Self> {
        check_epsilon(epsilon)?;
        let (rho, z) = bandwidth_profile(ts, &density, beta)?;
        Ok(Self {
            epsilon,
            mode: KernelMode::VariableBandwidth,
            beta,
            rho,
            log_z: z.ln(),
            density: Some(density),
            covariance: None,
        })
    }

    /// `K = Σ_M`, the empirical covariance of the training samples.
    pub fn empirical_covariance(ts: &TrainingSet, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        let cov = empirical_covariance(ts.data());
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("empirical covariance is singular"))?;
        let inv_l = chol
            .l()
            .try_inverse()
            .ok_or_else(|| Error::invalid("empirical covariance is singular"))?;
        Ok(Self {
            epsilon,
            mode: KernelMode::EmpiricalCovariance,
            beta: 0.0,
            rho: vec![1.0; ts.count()],
            log_z: 0.0,
            density: None,
            covariance: Some((cov, inv_l)),
        })
    }

    /// Same kernel with a different ε.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self {
            epsilon,
            ..self.clone()
        })
    }

    /// Rebuilds a variable-bandwidth spec from stored parts without
    /// re-evaluating the KDE at the training points.
    pub(crate) fn variable_from_parts(
        ts: &TrainingSet,
        epsilon: f64,
        beta: f64,
        kde_bandwidth: f64,
        rho: Vec<f64>,
        z_norm: f64,
    ) -> Result<Self> {
        check_epsilon(epsilon)?;
        if rho.len() != ts.count() || rho.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::invalid("stored bandwidth profile is invalid"));
        }
        Ok(Self {
            epsilon,
            mode: KernelMode::VariableBandwidth,
            beta,
            rho,
            log_z: z_norm.ln(),
            density: Some(DensityEstimate::with_bandwidth(ts, kde_bandwidth)?),
            covariance: None,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn z_norm(&self) -> f64 {
        self.log_z.exp()
    }

    pub fn density(&self) -> Option<&DensityEstimate> {
        self.density.as_ref()
    }

    pub fn covariance(&self) -> Option<&DMatrix<f64>> {
        self.covariance.as_ref().map(|(c, _)| c)
    }

    /// `ρ(x)`; 1 outside variable-bandwidth mode.
    pub fn rho_at(&self, x: &[f64]) -> f64 {
        match &self.density {
            Some(kde) if self.mode == KernelMode::VariableBandwidth => {
                (self.beta * (kde.log_density(x) - self.log_z)).exp()
            }
            _ => 1.0,
        }
    }

    /// The preconditioner `K(x)` as a matrix.
    pub fn preconditioner(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.covariance {
            Some((cov, _)) => cov.clone(),
            None => DMatrix::identity(x.len(), x.len()) * self.rho_at(x),
        }
    }

    fn check(&self, ts: &TrainingSet) -> Result<()> {
        if self.rho.len() != ts.count() {
            return Err(Error::DimensionMismatch {
                expected: ts.count(),
                actual: self.rho.len(),
            });
        }
        Ok(())
    }
}

/// Per-sample bandwidths `ρ_i = (π_i / Z)^β` with `Z` the mean of the
/// `π_i = kde(x^(i))`. Returns `(ρ, Z)`.
pub fn bandwidth_profile(
    ts: &TrainingSet,
    kde: &DensityEstimate,
    beta: f64,
) -> Result<(Vec<f64>, f64)> {
    let log_pi: Vec<f64> = (0..ts.count())
        .map(|i| kde.log_density(ts.sample_slice(i)))
        .collect();
    profile_from_log_densities(&log_pi, beta)
}

/// [`bandwidth_profile`] from precomputed log densities.
pub fn profile_from_log_densities(log_pi: &[f64], beta: f64) -> Result<(Vec<f64>, f64)> {
    if beta > 0.0 || !beta.is_finite() {
        return Err(Error::invalid(format!("beta must be <= 0, got {beta}")));
    }
    if log_pi.is_empty() {
        return Err(Error::invalid("empty density profile"));
    }
    let log_z = log_sum_exp(log_pi) - (log_pi.len() as f64).ln();
    let rho = log_pi
        .iter()
        .map(|lp| (beta * (lp - log_z)).exp())
        .collect();
    Ok((rho, log_z.exp()))
}

/// Training points in the coordinates where the kernel is isotropic, plus
/// the per-sample scales. Shared by the matrix, vector and streaming paths.
#[derive(Debug, Clone)]
pub(crate) struct Geometry {
    d: usize,
    points: Vec<f64>,
    rho: Vec<f64>,
    epsilon: f64,
    variable: bool,
    inv_l: Option<DMatrix<f64>>,
}

impl Geometry {
    pub(crate) fn new(ts: &TrainingSet, spec: &KernelSpec) -> Result<Self> {
        spec.check(ts)?;
        let inv_l = spec.covariance.as_ref().map(|(_, l)| l.clone());
        let points = match &inv_l {
            Some(l) => (l * ts.data()).as_slice().to_vec(),
            None => ts.data().as_slice().to_vec(),
        };
        Ok(Self {
            d: ts.dim(),
            points,
            rho: spec.rho.clone(),
            epsilon: spec.epsilon,
            variable: spec.mode == KernelMode::VariableBandwidth,
            inv_l,
        })
    }

    pub(crate) fn count(&self) -> usize {
        self.rho.len()
    }

    #[inline]
    pub(crate) fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    /// Maps a query point into kernel coordinates.
    pub(crate) fn transform(&self, x: &[f64]) -> Vec<f64> {
        match &self.inv_l {
            Some(l) => (l * DVector::from_column_slice(x)).as_slice().to_vec(),
            None => x.to_vec(),
        }
    }

    /// Log of `t_ij`.
    #[inline]
    pub(crate) fn log_entry(&self, i: usize, j: usize) -> f64 {
        let r2 = sq_dist(self.point(i), self.point(j));
        -r2 / (2.0 * self.epsilon * (self.rho[i] + self.rho[j]))
    }

    /// Log of `t_i(x)` for all `i`, with `xq` already transformed.
    pub(crate) fn log_vector_into(&self, xq: &[f64], rho_x: f64, out: &mut Vec<f64>) {
        out.clear();
        let d = self.d;
        if self.variable {
            let c = 2.0 * self.epsilon;
            out.extend(
                self.points
                    .chunks_exact(d)
                    .zip(&self.rho)
                    .map(|(p, r)| -sq_dist(p, xq) / (c * (r + rho_x))),
            );
        } else {
            let c = -1.0 / (2.0 * self.epsilon * (1.0 + rho_x));
            out.extend(self.points.chunks_exact(d).map(|p| c * sq_dist(p, xq)));
        }
    }
}

/// Dense `M × M` kernel matrix. Symmetric with unit diagonal.
pub fn kernel_matrix(ts: &TrainingSet, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    let geo = Geometry::new(ts, spec)?;
    let m = geo.count();
    let mut t = DMatrix::from_element(m, m, 1.0);
    for j in 0..m {
        for i in (j + 1)..m {
            let v = geo.log_entry(i, j).exp();
            t[(i, j)] = v;
            t[(j, i)] = v;
        }
    }
    Ok(t)
}

/// Out-of-sample kernel vector `t(x)`.
pub fn kernel_vector(ts: &TrainingSet, spec: &KernelSpec, x: &[f64]) -> Result<DVector<f64>> {
    if x.len() != ts.dim() {
        return Err(Error::DimensionMismatch {
            expected: ts.dim(),
            actual: x.len(),
        });
    }
    let geo = Geometry::new(ts, spec)?;
    let mut logs = Vec::with_capacity(geo.count());
    geo.log_vector_into(&geo.transform(x), spec.rho_at(x), &mut logs);
    Ok(DVector::from_iterator(logs.len(), logs.into_iter().map(f64::exp)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> TrainingSet {
        TrainingSet::from_samples(&[[0.0], [1.0]]).unwrap()
    }

    #[test]
    fn identical_points_give_all_ones() {
        let ts = TrainingSet::from_samples(&[[0.3, 0.3], [0.3, 0.3]]).unwrap();
        let t = kernel_matrix(&ts, &KernelSpec::fixed(&ts, 0.2).unwrap()).unwrap();
        assert_eq!(t, DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn unit_pair_fixed_entries() {
        let ts = pair();
        let spec = KernelSpec::fixed(&ts, 0.5).unwrap();
        let t = kernel_matrix(&ts, &spec).unwrap();
        assert!((t[(0, 1)] - (-0.5f64).exp()).abs() < 1e-15);
        let tv = kernel_vector(&ts, &spec, &[0.5]).unwrap();
        for v in tv.iter() {
            assert!((v - (-0.125f64).exp()).abs() < 1e-15);
            assert!((v - 0.8825).abs() < 1e-4);
        }
    }

    #[test]
    fn profile_hand_values() {
        let (rho, z) = profile_from_log_densities(&[1f64.ln(), 4f64.ln()], -0.5).unwrap();
        assert!((z - 2.5).abs() < 1e-14);
        assert!((rho[0] - (1.0f64 / 2.5).powf(-0.5)).abs() < 1e-12);
        assert!((rho[1] - (4.0f64 / 2.5).powf(-0.5)).abs() < 1e-12);
        assert!((rho[0] - 1.5811).abs() < 1e-4 && (rho[1] - 0.7906).abs() < 1e-4);
    }

    #[test]
    fn profile_edge_cases() {
        let (rho, _) = profile_from_log_densities(&[0.3, -2.0, 5.0], 0.0).unwrap();
        assert!(rho.iter().all(|r| *r == 1.0));
        let (rho, _) = profile_from_log_densities(&[-1.7; 4], -3.0).unwrap();
        assert!(rho.iter().all(|r| (r - 1.0).abs() < 1e-14));
        assert!(profile_from_log_densities(&[0.0], 0.1).is_err());
    }

    #[test]
    fn vector_at_sample_reproduces_column_in_all_modes() {
        let ts = TrainingSet::from_samples(&[
            [0.0, 0.1],
            [0.4, -0.3],
            [1.0, 0.7],
            [-0.6, 0.2],
            [0.2, 0.9],
        ])
        .unwrap();
        let specs = [
            KernelSpec::fixed(&ts, 0.3).unwrap(),
            KernelSpec::variable(&ts, 0.3, -0.4).unwrap(),
            KernelSpec::empirical_covariance(&ts, 0.3).unwrap(),
        ];
        for spec in &specs {
            let t = kernel_matrix(&ts, spec).unwrap();
            for j in 0..ts.count() {
                let tv = kernel_vector(&ts, spec, ts.sample_slice(j)).unwrap();
                assert!((tv - t.column(j)).amax() <= 1e-12, "{:?}", spec.mode());
            }
        }
    }

    #[test]
    fn variable_kernel_matches_scalar_formula() {
        let ts = TrainingSet::from_samples(&[[0.0], [0.5], [2.0]]).unwrap();
        let spec = KernelSpec::variable(&ts, 0.1, -0.5).unwrap();
        let t = kernel_matrix(&ts, &spec).unwrap();
        let r = spec.rho();
        let expected = (-(2.0f64 * 2.0) / (2.0 * 0.1 * (r[0] + r[2]))).exp();
        assert!((t[(0, 2)] - expected).abs() < 1e-15);
        // the isolated point gets the widest bandwidth
        assert!(r[2] > r[0] && r[2] > r[1]);
    }

    #[test]
    fn covariance_kernel_matches_quadratic_form() {
        let ts = TrainingSet::from_samples(&[[0.0, 0.0], [1.0, 0.5], [0.3, 2.0], [-1.0, 0.4]]).unwrap();
        let spec = KernelSpec::empirical_covariance(&ts, 0.7).unwrap();
        let sigma = spec.covariance().unwrap().clone();
        let inv = (sigma * 2.0).try_inverse().unwrap();
        let t = kernel_matrix(&ts, &spec).unwrap();
        let d = ts.sample(1) - ts.sample(2);
        let q = (d.transpose() * inv * &d)[(0, 0)];
        assert!((t[(1, 2)] - (-q / 1.4).exp()).abs() < 1e-13);
    }

    #[test]
    fn far_query_is_tiny_but_positive() {
        let ts = pair();
        let spec = KernelSpec::fixed(&ts, 1.0).unwrap();
        let tv = kernel_vector(&ts, &spec, &[20.0]).unwrap();
        assert!(tv.iter().all(|v| *v > 0.0 && *v < 1e-30));
    }
}
