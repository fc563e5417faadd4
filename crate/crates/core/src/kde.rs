//! Low-accuracy Gaussian kernel density estimate used to set variable
//! bandwidths.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::training::TrainingSet;

/// Isotropic Gaussian KDE over the training samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    bandwidth: f64,
    reference: DMatrix<f64>,
    /// `M (2π h²)^{d/2}`, kept as a logarithm.
    log_normalizer: f64,
}

impl DensityEstimate {
    /// Fits the KDE with a rule-of-thumb bandwidth: Silverman's multivariate
    /// factor applied to the mean per-dimension standard deviation.
    pub fn fit(ts: &TrainingSet) -> Result<Self> {
        let m = ts.count();
        if m < 2 {
            return Err(Error::invalid("density estimate needs at least 2 samples"));
        }
        let d = ts.dim();
        let mean_std = ts
            .data()
            .row_iter()
            .map(|row| {
                let mean = row.mean();
                (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt()
            })
            .sum::<f64>()
            / d as f64;
        if !(mean_std > 0.0) {
            return Err(Error::ZeroSpread);
        }
        let factor = (4.0 / ((d as f64 + 2.0) * m as f64)).powf(1.0 / (d as f64 + 4.0));
        Self::with_bandwidth(ts, mean_std * factor)
    }

    pub fn with_bandwidth(ts: &TrainingSet, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid("KDE bandwidth must be positive and finite"));
        }
        let d = ts.dim() as f64;
        let log_normalizer = (ts.count() as f64).ln()
            + 0.5 * d * (2.0 * std::f64::consts::PI * bandwidth * bandwidth).ln();
        Ok(Self {
            bandwidth,
            reference: ts.data().clone(),
            log_normalizer,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn reference_points(&self) -> &DMatrix<f64> {
        &self.reference
    }

    pub fn normalizer(&self) -> f64 {
        self.log_normalizer.exp()
    }

    /// Natural log of the density. Finite for every finite `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.reference.nrows();
        debug_assert_eq!(x.len(), d);
        let inv = -0.5 / (self.bandwidth * self.bandwidth);
        let logs: Vec<f64> = self
            .reference
            .as_slice()
            .chunks_exact(d)
            .map(|xi| inv * sq_dist(xi, x))
            .collect();
        log_sum_exp(&logs) - self.log_normalizer
    }

    /// Density value, clamped away from zero so far-field queries stay
    /// strictly positive.
    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp().max(f64::MIN_POSITIVE)
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_points() -> TrainingSet {
        TrainingSet::from_samples(&[[0.0], [1.0]]).unwrap()
    }

    #[test]
    fn matches_two_component_mixture() {
        let ts = two_points();
        let kde = DensityEstimate::fit(&ts).unwrap();
        let h = kde.bandwidth();
        // sample std of {0,1} is 1/sqrt(2); Silverman factor for d=1, M=2
        let expected_h = (0.5f64).sqrt() * (4.0f64 / 6.0).powf(0.2);
        assert!((h - expected_h).abs() < 1e-15);
        let phi = |u: f64| (-0.5 * u * u / (h * h)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt());
        let oracle = 0.5 * (phi(0.5) + phi(-0.5));
        assert!((kde.density(&[0.5]) - oracle).abs() < 1e-14 * oracle);
    }

    #[test]
    fn far_field_is_positive() {
        let ts = TrainingSet::from_samples(&[[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]]).unwrap();
        let kde = DensityEstimate::fit(&ts).unwrap();
        let far = kde.density(&[1e3, -1e3]);
        assert!(far > 0.0 && far < 1e-300);
        assert!(kde.log_density(&[1e3, -1e3]).is_finite());
        assert!(kde.density(&[5.0, 5.0]) < kde.density(&[1.0, 1.0]));
    }

    #[test]
    fn training_point_dominates_farther_points() {
        let ts = TrainingSet::from_samples(&[[0.0], [0.2], [0.3]]).unwrap();
        let kde = DensityEstimate::fit(&ts).unwrap();
        let at_sample = kde.density(&[0.3]);
        for x in [0.8, 1.5, -2.0, 10.0] {
            assert!(at_sample >= kde.density(&[x]));
        }
    }

    #[test]
    fn identical_samples_have_zero_spread() {
        let ts = TrainingSet::from_samples(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert!(matches!(DensityEstimate::fit(&ts), Err(Error::ZeroSpread)));
        let single = TrainingSet::from_samples(&[[1.0]]).unwrap();
        assert!(DensityEstimate::fit(&single).is_err());
    }
}
