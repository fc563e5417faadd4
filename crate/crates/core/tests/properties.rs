use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use sbridge_core::kernel::profile_from_log_densities;
use sbridge_core::{
    bandwidth_profile, kernel_matrix, kernel_vector, DensityEstimate, sinkhorn_fit, KernelSpec, SinkhornOptions, TrainingSet,
};

fn dataset() -> impl Strategy<Value = TrainingSet> {
    (1usize..=4, 3usize..=30).prop_flat_map(|(d, m)| {
        // the index ramp keeps every coordinate spread out, which the density
        // estimate needs
        prop::collection::vec(-3.0f64..3.0, d * m).prop_map(move |v| {
            let data = DMatrix::from_fn(d, m, |k, j| v[j * d + k] + 0.05 * j as f64);
            TrainingSet::new(data).unwrap()
        })
    })
}

fn specs(ts: &TrainingSet, eps: f64, beta: f64) -> Vec<KernelSpec> {
    vec![
        KernelSpec::fixed(ts, eps).unwrap(),
        KernelSpec::variable(ts, eps, beta).unwrap(),
    ]
}

fn bbox_contains(ts: &TrainingSet, x: &DVector<f64>) -> bool {
    let (lo, hi) = ts.bounding_box();
    x.iter()
        .zip(lo.iter().zip(hi.iter()))
        .all(|(v, (l, h))| *v >= l - 1e-12 && *v <= h + 1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_matrix_is_symmetric_with_unit_diagonal(ts in dataset(), eps in 0.01f64..2.0, beta in -0.5f64..0.0) {
        for spec in specs(&ts, eps, beta) {
            let t = kernel_matrix(&ts, &spec).unwrap();
            prop_assert_eq!(&t, &t.transpose());
            for i in 0..t.nrows() {
                prop_assert_eq!(t[(i, i)], 1.0);
            }
            prop_assert!(t.iter().all(|&e| (0.0..=1.0).contains(&e)));
        }
        // strictly positive wherever the exponent is representable
        let t = kernel_matrix(&ts, &KernelSpec::fixed(&ts, eps).unwrap()).unwrap();
        for i in 0..ts.count() {
            for j in 0..ts.count() {
                let r2: f64 = ts.sample_slice(i).iter().zip(ts.sample_slice(j)).map(|(a, b)| (a - b).powi(2)).sum();
                if r2 / (4.0 * eps) < 700.0 {
                    prop_assert!(t[(i, j)] > 0.0);
                }
            }
        }
    }

    #[test]
    fn kernel_vector_at_sample_is_matrix_column(ts in dataset(), eps in 0.05f64..2.0, beta in -0.5f64..0.0) {
        for spec in specs(&ts, eps, beta) {
            let t = kernel_matrix(&ts, &spec).unwrap();
            for j in 0..ts.count() {
                let col = kernel_vector(&ts, &spec, ts.sample_slice(j)).unwrap();
                prop_assert!((col - t.column(j)).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn bandwidth_profile_is_scale_invariant(logs in prop::collection::vec(-5.0f64..5.0, 1..40), shift in -10.0f64..10.0, beta in -1.0f64..0.0) {
        let (rho, _) = profile_from_log_densities(&logs, beta).unwrap();
        let shifted: Vec<f64> = logs.iter().map(|l| l + shift).collect();
        let (rho2, _) = profile_from_log_densities(&shifted, beta).unwrap();
        for (a, b) in rho.iter().zip(&rho2) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        let (ones, _) = profile_from_log_densities(&logs, 0.0).unwrap();
        prop_assert!(ones.iter().all(|&r| r == 1.0));
    }

    #[test]
    fn fitted_model_invariants(ts in dataset(), eps in 0.05f64..2.0, beta in -0.5f64..0.0, seed in 0u64..1000) {
        for spec in specs(&ts, eps, beta) {
            let opts = SinkhornOptions::default();
            let model = sinkhorn_fit(&ts, &spec, opts).unwrap();
            prop_assert!(model.residual() <= opts.tol);
            prop_assert!(model.weights().iter().all(|&v| v > 0.0));
            let p = model.transition_matrix().unwrap();
            prop_assert_eq!(&p, &p.transpose());
            for row in p.row_iter() {
                prop_assert!((row.sum() - 1.0).abs() <= 10.0 * opts.tol);
            }

            // queries around the data
            let (lo, hi) = ts.bounding_box();
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            for _ in 0..50 {
                let x: Vec<f64> = lo.iter().zip(hi.iter()).map(|(l, h)| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let u = (state >> 11) as f64 / (1u64 << 53) as f64;
                    l - 1.0 + u * (h - l + 2.0)
                }).collect();
                let mom = model.moments(&x).unwrap();
                prop_assert!(mom.p.weights().iter().all(|&w| w >= 0.0));
                prop_assert!((mom.p.sum() - 1.0).abs() <= 1e-12);
                prop_assert!(bbox_contains(&ts, &mom.mean));
                let c = &mom.covariance;
                prop_assert!((c - c.transpose()).amax() <= 1e-12 * c.amax().max(1.0));
                let trace = c.trace();
                let min_eig = SymmetricEigen::new(c.clone()).eigenvalues.min();
                prop_assert!(min_eig >= -1e-10 * trace.max(f64::MIN_POSITIVE));
                let score = model.score(&x).unwrap();
                let back = score * model.epsilon() + DVector::from_column_slice(&x);
                prop_assert!((back - &mom.mean).amax() <= 1e-12 * mom.mean.amax().max(1.0));
            }
        }
    }

    #[test]
    fn score_is_translation_invariant(ts in dataset(), eps in 0.1f64..2.0, shift in -5.0f64..5.0) {
        let model = sinkhorn_fit(&ts, &KernelSpec::fixed(&ts, eps).unwrap(), SinkhornOptions::default()).unwrap();
        let moved = TrainingSet::new(ts.data().add_scalar(shift)).unwrap();
        let model2 = sinkhorn_fit(&moved, &KernelSpec::fixed(&moved, eps).unwrap(), SinkhornOptions::default()).unwrap();
        let x: Vec<f64> = ts.sample_slice(0).iter().map(|v| v + 0.3).collect();
        let x2: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let s1 = model.score(&x).unwrap();
        let s2 = model2.score(&x2).unwrap();
        prop_assert!((&s1 - &s2).amax() <= 1e-6 * s1.amax().max(1.0));
    }

    #[test]
    fn csv_round_trip_is_exact(ts in dataset()) {
        let mut buf = Vec::new();
        ts.write_csv_to(&mut buf).unwrap();
        let back = TrainingSet::read_csv_from(buf.as_slice(), false).unwrap();
        prop_assert_eq!(back.data(), ts.data());
        let mut bin = Vec::new();
        ts.write_sbts_to(&mut bin).unwrap();
        let back = TrainingSet::read_sbts_from(bin.as_slice()).unwrap();
        prop_assert_eq!(back.data(), ts.data());
    }
}

#[test]
fn zero_beta_profile_is_all_ones() {
    let ts = TrainingSet::from_samples(&[[0.0, 1.0], [2.0, -1.0], [0.5, 0.5], [3.0, 3.0]]).unwrap();
    let kde = DensityEstimate::fit(&ts).unwrap();
    let (rho, z) = bandwidth_profile(&ts, &kde, 0.0).unwrap();
    assert!(rho.iter().all(|&r| r == 1.0));
    assert!(z > 0.0);
}
