//! Discrete Schrödinger bridge of the empirical measure with itself.
//!
//! The fit finds positive weights `v` such that `P = D(v) T D(v)` is
//! row-stochastic, i.e. `v_i (T v)_i = 1`. A fitted [`BridgeModel`] then
//! answers out-of-sample queries through
//!
//! ```text
//! p(x) = D(v) t(x) / vᵀ t(x),   m(x; ε) = 𝒳 p(x),
//! C(x) = ε⁻¹ (𝒳 - m 1ᵀ) D(p(x)) (𝒳 - m 1ᵀ)ᵀ.
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{kernel_matrix, Geometry, KernelMode, KernelSpec};
use crate::training::TrainingSet;

/// Arguments below this exponentiate to exactly zero.
const EXP_UNDERFLOW: f64 = -746.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    /// Sup-norm tolerance on `v_i (T v)_i - 1`.
    pub tol: f64,
    pub max_iter: usize,
    /// Largest `M` for which `T` is stored densely; above it every matvec
    /// recomputes kernel entries from the data.
    pub dense_limit: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            dense_limit: 10_000,
        }
    }
}

enum KernelOperator<'a> {
    Dense(DMatrix<f64>),
    Streaming(&'a Geometry),
}

impl KernelOperator<'_> {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        match self {
            KernelOperator::Dense(t) => {
                let m = v.len();
                let data = t.as_slice();
                // T is symmetric, so row i equals column i (contiguous).
                for (i, o) in out.iter_mut().enumerate() {
                    let col = &data[i * m..(i + 1) * m];
                    *o = col.iter().zip(v).map(|(a, b)| a * b).sum();
                }
            }
            KernelOperator::Streaming(geo) => {
                let m = v.len();
                out.copy_from_slice(v);
                for i in 0..m {
                    let vi = v[i];
                    let mut acc = 0.0;
                    for j in (i + 1)..m {
                        let l = geo.log_entry(i, j);
                        if l < EXP_UNDERFLOW {
                            continue;
                        }
                        let t = l.exp();
                        acc += t * v[j];
                        out[j] += t * vi;
                    }
                    out[i] += acc;
                }
            }
        }
    }
}

/// Frozen fit artifact.
#[derive(Debug, Clone)]
pub struct BridgeModel {
    training: TrainingSet,
    spec: KernelSpec,
    geometry: Geometry,
    v: DVector<f64>,
    log_v: Vec<f64>,
    residual: f64,
    iterations: usize,
    options: SinkhornOptions,
}

/// Solves the symmetric scaling problem with the fixed-point iteration
/// `v ← sqrt(v ⊘ T v)` started from `v = 1`.
pub fn sinkhorn_fit(ts: &TrainingSet, spec: &KernelSpec, opts: SinkhornOptions) -> Result<BridgeModel> {
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("sinkhorn tolerance must be positive"));
    }
    let geometry = Geometry::new(ts, spec)?;
    let m = ts.count();
    let op = if m <= opts.dense_limit {
        KernelOperator::Dense(kernel_matrix(ts, spec)?)
    } else {
        KernelOperator::Streaming(&geometry)
    };

    let mut v = vec![1.0; m];
    let mut tv = vec![0.0; m];
    op.apply(&v, &mut tv);
    for (row, &sum) in tv.iter().enumerate() {
        if !(sum >= 1e-300) || !sum.is_finite() {
            return Err(Error::DegenerateKernel { row, sum });
        }
    }

    let mut iterations = 0;
    let residual = loop {
        let residual = v
            .iter()
            .zip(&tv)
            .map(|(a, b)| (a * b - 1.0).abs())
            .fold(0.0, f64::max);
        if residual <= opts.tol {
            break residual;
        }
        if iterations >= opts.max_iter || !residual.is_finite() {
            return Err(Error::NotConverged {
                iterations,
                residual,
            });
        }
        for (vi, ti) in v.iter_mut().zip(&tv) {
            *vi = (*vi / ti).sqrt();
        }
        op.apply(&v, &mut tv);
        iterations += 1;
    };
    drop(op);

    BridgeModel::from_weights(ts.clone(), spec.clone(), v, residual, iterations, opts)
}

/// Probability weights over the training samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn max_weight(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|w| **w > 0.0)
            .map(|w| w * w.ln())
            .sum::<f64>()
    }
}

/// Probability vector, conditional mean and scaled conditional covariance
/// at one query point.
#[derive(Debug, Clone)]
pub struct Moments {
    pub p: ProbabilityVector,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl BridgeModel {
    pub(crate) fn from_weights(
        training: TrainingSet,
        spec: KernelSpec,
        v: Vec<f64>,
        residual: f64,
        iterations: usize,
        options: SinkhornOptions,
    ) -> Result<Self> {
        if v.len() != training.count() || v.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("sinkhorn weights must be positive and finite"));
        }
        let geometry = Geometry::new(&training, &spec)?;
        let log_v = v.iter().map(|w| w.ln()).collect();
        Ok(Self {
            training,
            spec,
            geometry,
            v: DVector::from_vec(v),
            log_v,
            residual,
            iterations,
            options,
        })
    }

    pub fn training(&self) -> &TrainingSet {
        &self.training
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn iterations_used(&self) -> usize {
        self.iterations
    }

    pub fn options(&self) -> SinkhornOptions {
        self.options
    }

    pub fn epsilon(&self) -> f64 {
        self.spec.epsilon()
    }

    pub fn dim(&self) -> usize {
        self.training.dim()
    }

    pub fn count(&self) -> usize {
        self.training.count()
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.count() {
            return Err(Error::IndexOutOfRange {
                index: j,
                count: self.count(),
            });
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("query point is not finite"));
        }
        Ok(())
    }

    /// Column `j` of `P`: transition probabilities out of sample `j`.
    /// Sums to `v_j (T v)_j`, i.e. to one within the fit tolerance.
    pub fn transition_probabilities(&self, j: usize) -> Result<ProbabilityVector> {
        self.check_index(j)?;
        let vj = self.v[j];
        let col = (0..self.count())
            .map(|i| {
                let t = if i == j { 1.0 } else { self.geometry.log_entry(i, j).exp() };
                self.v[i] * t * vj
            })
            .collect();
        Ok(ProbabilityVector(col))
    }

    /// Diffusion distance `‖p_i - p_j‖²`.
    pub fn diffusion_distance(&self, i: usize, j: usize) -> Result<f64> {
        let pi = self.transition_probabilities(i)?;
        let pj = self.transition_probabilities(j)?;
        Ok(pi
            .0
            .iter()
            .zip(&pj.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    /// `log(vᵢ tᵢ(x))` for every sample.
    fn log_weights(&self, x: &[f64]) -> Vec<f64> {
        let mut logs = Vec::with_capacity(self.count());
        let xq = self.geometry.transform(x);
        self.geometry
            .log_vector_into(&xq, self.spec.rho_at(x), &mut logs);
        for (l, lv) in logs.iter_mut().zip(&self.log_v) {
            *l += lv;
        }
        logs
    }

    /// `p(x) = D(v) t(x) / vᵀ t(x)`.
    pub fn probability_vector(&self, x: &[f64]) -> Result<ProbabilityVector> {
        self.check_point(x)?;
        let mut w = self.log_weights(x);
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::WeightUnderflow);
        }
        let mut sum = 0.0;
        for l in w.iter_mut() {
            let s = *l - max;
            *l = if s < EXP_UNDERFLOW { 0.0 } else { s.exp() };
            sum += *l;
        }
        for l in w.iter_mut() {
            *l /= sum;
        }
        Ok(ProbabilityVector(w))
    }

    fn mean_of(&self, p: &ProbabilityVector) -> DVector<f64> {
        let d = self.dim();
        let mut mean = DVector::zeros(d);
        for (i, &w) in p.0.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (mk, xk) in mean.iter_mut().zip(self.training.sample_slice(i)) {
                *mk += w * xk;
            }
        }
        mean
    }

    fn covariance_of(&self, p: &ProbabilityVector, mean: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let mut cov = DMatrix::zeros(d, d);
        let mut diff = vec![0.0; d];
        for (i, &w) in p.0.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for ((dk, xk), mk) in diff.iter_mut().zip(self.training.sample_slice(i)).zip(mean.iter()) {
                *dk = xk - mk;
            }
            for a in 0..d {
                let wa = w * diff[a];
                for b in a..d {
                    cov[(a, b)] += wa * diff[b];
                }
            }
        }
        let inv_eps = 1.0 / self.epsilon();
        for a in 0..d {
            for b in a..d {
                let c = cov[(a, b)] * inv_eps;
                cov[(a, b)] = c;
                cov[(b, a)] = c;
            }
        }
        cov
    }

    /// Conditional mean `m(x; ε) = 𝒳 p(x)`, a convex combination of the
    /// training samples.
    pub fn conditional_mean(&self, x: &[f64]) -> Result<DVector<f64>> {
        let p = self.probability_vector(x)?;
        Ok(self.mean_of(&p))
    }

    /// Scaled conditional covariance `C(x)`.
    pub fn conditional_covariance(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.moments(x)?.covariance)
    }

    /// `p(x)`, `m(x; ε)` and `C(x)` from a single kernel evaluation.
    pub fn moments(&self, x: &[f64]) -> Result<Moments> {
        let p = self.probability_vector(x)?;
        let mean = self.mean_of(&p);
        let covariance = self.covariance_of(&p, &mean);
        Ok(Moments { p, mean, covariance })
    }

    /// `p(x)` and `m(x; ε)` without the covariance.
    pub fn mean_and_weights(&self, x: &[f64]) -> Result<(ProbabilityVector, DVector<f64>)> {
        let p = self.probability_vector(x)?;
        let mean = self.mean_of(&p);
        Ok((p, mean))
    }

    /// `log Π(x; ε) = 2 log(vᵀ t(x))`. Only defined for `K = I`, where
    /// `m(x; ε) = x + ε ∇ log Π(x; ε)`.
    pub fn log_density_proxy(&self, x: &[f64]) -> Result<f64> {
        if self.spec.mode() != KernelMode::Fixed {
            return Err(Error::UnsupportedMode { required: "fixed-bandwidth" });
        }
        self.check_point(x)?;
        Ok(2.0 * crate::linalg::log_sum_exp(&self.log_weights(x)))
    }

    /// Score estimate `(m(x; ε) - x) / ε`.
    pub fn score(&self, x: &[f64]) -> Result<DVector<f64>> {
        let m = self.conditional_mean(x)?;
        Ok((m - DVector::from_column_slice(x)) / self.epsilon())
    }

    /// Full transition matrix `P = D(v) T D(v)`; `O(M²)` memory.
    pub fn transition_matrix(&self) -> Result<DMatrix<f64>> {
        let mut t = kernel_matrix(&self.training, &self.spec)?;
        // (v_i v_j) t_ij keeps P exactly symmetric
        for j in 0..t.ncols() {
            for i in 0..t.nrows() {
                t[(i, j)] *= self.v[i] * self.v[j];
            }
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit_fixed(samples: &[&[f64]], eps: f64) -> BridgeModel {
        let ts = TrainingSet::from_samples(samples).unwrap();
        let spec = KernelSpec::fixed(&ts, eps).unwrap();
        sinkhorn_fit(&ts, &spec, SinkhornOptions::default()).unwrap()
    }

    #[test]
    fn identical_points_split_evenly() {
        let model = fit_fixed(&[&[2.0], &[2.0]], 0.1);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((model.weights()[0] - h).abs() < 1e-10);
        assert!((model.weights()[1] - h).abs() < 1e-10);
        let p = model.transition_probabilities(0).unwrap();
        assert!((p.weights()[0] - 0.5).abs() < 1e-10 && (p.weights()[1] - 0.5).abs() < 1e-10);
        assert!(model.diffusion_distance(0, 1).unwrap() < 1e-20);
    }

    #[test]
    fn single_sample_model() {
        let model = fit_fixed(&[&[0.5, -1.0]], 0.3);
        assert_eq!(model.weights()[0], 1.0);
        let p = model.probability_vector(&[10.0, 4.0]).unwrap();
        assert_eq!(p.weights(), &[1.0]);
        let m = model.conditional_mean(&[-3.0, 7.0]).unwrap();
        assert_eq!(m.as_slice(), &[0.5, -1.0]);
        assert_eq!(model.conditional_covariance(&[1.0, 1.0]).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn symmetric_pair_mean_and_covariance() {
        let eps = 0.4;
        let model = fit_fixed(&[&[-1.0], &[1.0]], eps);
        let mom = model.moments(&[0.0]).unwrap();
        assert!(mom.mean[0].abs() < 1e-14);
        assert!((mom.covariance[(0, 0)] - 1.0 / eps).abs() < 1e-10);
    }

    #[test]
    fn index_errors() {
        let model = fit_fixed(&[&[0.0], &[1.0]], 0.1);
        assert!(matches!(
            model.transition_probabilities(2),
            Err(Error::IndexOutOfRange { index: 2, count: 2 })
        ));
        assert!(model.diffusion_distance(0, 5).is_err());
        assert!(model.probability_vector(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn diffusion_distance_is_symmetric_and_zero_on_diagonal() {
        let model = fit_fixed(&[&[0.0], &[0.3], &[1.1], &[2.0]], 0.2);
        assert_eq!(model.diffusion_distance(2, 2).unwrap(), 0.0);
        let a = model.diffusion_distance(0, 3).unwrap();
        let b = model.diffusion_distance(3, 0).unwrap();
        assert!((a - b).abs() < 1e-16);
    }

    #[test]
    fn streaming_fit_matches_dense_fit() {
        let samples: Vec<[f64; 2]> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.37;
                [t.sin() * (1.0 + 0.1 * t), (2.0 * t).cos()]
            })
            .collect();
        let ts = TrainingSet::from_samples(&samples).unwrap();
        let spec = KernelSpec::variable(&ts, 0.05, -0.3).unwrap();
        let dense = sinkhorn_fit(&ts, &spec, SinkhornOptions::default()).unwrap();
        let streamed = sinkhorn_fit(
            &ts,
            &spec,
            SinkhornOptions {
                dense_limit: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((dense.weights() - streamed.weights()).amax() < 1e-11);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let ts = TrainingSet::from_samples(&[[0.0], [0.1], [5.0]]).unwrap();
        let spec = KernelSpec::fixed(&ts, 1.0).unwrap();
        let err = sinkhorn_fit(
            &ts,
            &spec,
            SinkhornOptions {
                max_iter: 1,
                ..Default::default()
            },
        )
        .unwrap_err();
        match err {
            Error::NotConverged { iterations, residual } => {
                assert_eq!(iterations, 1);
                assert!(residual > 1e-10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_density_proxy_requires_fixed_mode() {
        let ts = TrainingSet::from_samples(&[[0.0], [0.5], [2.0]]).unwrap();
        let spec = KernelSpec::variable(&ts, 0.1, -0.5).unwrap();
        let model = sinkhorn_fit(&ts, &spec, SinkhornOptions::default()).unwrap();
        assert!(matches!(
            model.log_density_proxy(&[0.1]),
            Err(Error::UnsupportedMode { .. })
        ));
    }

    #[test]
    fn single_sample_log_density_proxy() {
        // v = 1, so log Π = 2 log t_1(x) = -‖x‖² / (2ε)
        let eps = 0.25;
        let model = fit_fixed(&[&[0.0, 0.0]], eps);
        let x = [0.3, -0.4];
        let expected = -(0.09 + 0.16) / (2.0 * eps);
        assert!((model.log_density_proxy(&x).unwrap() - expected).abs() < 1e-14);
    }
}
