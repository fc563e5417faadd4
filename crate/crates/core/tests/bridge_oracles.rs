use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbridge_core::datasets::singular_gaussian_2d;
use sbridge_core::{kernel_matrix, sinkhorn_fit, KernelSpec, SinkhornOptions, TrainingSet};

/// Damped Newton on `v_i (T v)_i = 1`, kept on the positive branch.
fn newton_scaling(t: &DMatrix<f64>) -> DVector<f64> {
    let m = t.nrows();
    let residual = |v: &DVector<f64>| -> DVector<f64> { v.component_mul(&(t * v)).add_scalar(-1.0) };
    let mut v = DVector::from_iterator(m, t.row_iter().map(|r| 1.0 / r.sum().sqrt()));
    let mut f = residual(&v);
    for _ in 0..200 {
        if f.amax() < 1e-15 {
            break;
        }
        let tv = t * &v;
        let mut jac = DMatrix::from_diagonal(&tv);
        for i in 0..m {
            for j in 0..m {
                jac[(i, j)] += v[i] * t[(i, j)];
            }
        }
        let step = jac.lu().solve(&(-&f)).expect("nonsingular jacobian");
        let mut alpha = 1.0;
        loop {
            let trial = &v + &step * alpha;
            if trial.iter().all(|&x| x > 0.0) {
                let ft = residual(&trial);
                if ft.norm() < f.norm() || alpha < 1e-8 {
                    v = trial;
                    f = ft;
                    break;
                }
            }
            alpha *= 0.5;
        }
    }
    v
}

fn random_set(rng: &mut ChaCha8Rng, d: usize, m: usize) -> TrainingSet {
    TrainingSet::new(DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.5..1.5))).unwrap()
}

#[test]
fn five_point_scaling_matches_root_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let d = 1 + trial % 3;
        let ts = random_set(&mut rng, d, 5);
        let eps = [0.05, 0.3, 1.0, 4.0][trial % 4];
        let spec = KernelSpec::fixed(&ts, eps).unwrap();
        let model = sinkhorn_fit(&ts, &spec, SinkhornOptions::default()).unwrap();
        let t = kernel_matrix(&ts, &spec).unwrap();
        let oracle = newton_scaling(&t);
        let v = model.weights();
        let res = v.component_mul(&(&t * v)).add_scalar(-1.0).amax();
        assert!(res <= 1e-10, "trial {trial}: residual {res:e}");
        let rel = (v - &oracle).component_div(&oracle).amax();
        assert!(rel <= 1e-8, "trial {trial}: relative gap {rel:e}");
    }
}

#[test]
fn identical_points_give_inverse_root_two() {
    let ts = TrainingSet::from_samples(&[[0.4, -1.0], [0.4, -1.0]]).unwrap();
    let model = sinkhorn_fit(&ts, &KernelSpec::fixed(&ts, 0.2).unwrap(), SinkhornOptions::default()).unwrap();
    for v in model.weights().iter() {
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }
    let p = model.transition_matrix().unwrap();
    assert!(p.iter().all(|e| (e - 0.5).abs() < 1e-12));
    let pj = model.transition_probabilities(0).unwrap();
    assert!(pj.weights().iter().all(|w| (w - 0.5).abs() < 1e-12));
}

fn two_clusters() -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pts = Vec::new();
    for c in [0.0, 10.0] {
        for _ in 0..15 {
            pts.push([c + rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]);
        }
    }
    TrainingSet::from_samples(&pts).unwrap()
}

#[test]
fn clusters_keep_their_mass_and_separate_in_diffusion_distance() {
    let ts = two_clusters();
    // kernel width comparable to the cluster size, far below the separation
    let model = sinkhorn_fit(&ts, &KernelSpec::fixed(&ts, 1.0).unwrap(), SinkhornOptions::default()).unwrap();
    for j in 0..30 {
        let p = model.transition_probabilities(j).unwrap();
        let own: f64 = if j < 15 {
            p.weights()[..15].iter().sum()
        } else {
            p.weights()[15..].iter().sum()
        };
        assert!(own >= 1.0 - 1e-6, "column {j}: own-cluster mass {own}");
        assert!((p.sum() - 1.0).abs() <= 1e-10);
    }
    let mut within = 0.0f64;
    let mut across = f64::INFINITY;
    for i in 0..30 {
        for j in 0..30 {
            let dist = model.diffusion_distance(i, j).unwrap();
            if (i < 15) == (j < 15) {
                within = within.max(dist);
            } else {
                across = across.min(dist);
            }
        }
    }
    assert!(across > within, "across {across} vs within {within}");
}

#[test]
fn tiny_epsilon_concentrates_on_the_queried_sample() {
    let ts = TrainingSet::from_samples(&[[0.0, 0.0], [1.0, 0.5], [-0.7, 2.0], [2.0, -1.0]]).unwrap();
    let mut gap2 = f64::INFINITY;
    for i in 0..4 {
        for j in 0..i {
            let r2: f64 = ts.sample_slice(i).iter().zip(ts.sample_slice(j)).map(|(a, b)| (a - b).powi(2)).sum();
            gap2 = gap2.min(r2);
        }
    }
    let model = sinkhorn_fit(&ts, &KernelSpec::fixed(&ts, 1e-6 * gap2).unwrap(), SinkhornOptions::default()).unwrap();
    for j in 0..4 {
        let x = ts.sample_slice(j);
        let mom = model.moments(x).unwrap();
        assert!(mom.p.weights()[j] >= 1.0 - 1e-12);
        // data scale is O(1)
        assert!(mom.covariance.norm() <= 1e-8);
    }
}

#[test]
fn projection_denoises_the_singular_direction() {
    let ts = singular_gaussian_2d(1000, 1e-4, 5).unwrap();
    let model = sinkhorn_fit(&ts, &KernelSpec::fixed(&ts, 0.1).unwrap(), SinkhornOptions::default()).unwrap();
    for (x1, x2) in [(0.3, 0.2), (-1.0, -0.4), (0.8, 0.5)] {
        let m = model.conditional_mean(&[x1, x2]).unwrap();
        assert!(m[1].abs() < 0.1 * x2.abs(), "x2 {x2} -> {}", m[1]);
    }
}

#[test]
fn score_signs_and_growth_with_shrinking_noise() {
    let x = [0.5, 0.2];
    let mut previous = 0.0;
    for nu in [1.0, 0.1, 0.01] {
        let ts = singular_gaussian_2d(10_000, nu, 21).unwrap();
        let model = sinkhorn_fit(&ts, &KernelSpec::fixed(&ts, 0.05).unwrap(), SinkhornOptions::default()).unwrap();
        let s = model.score(&x).unwrap();
        // ideal large-sample score is (-x1/(1+nu), -x2/nu)
        assert!(s[0] < 0.0 && s[1] < 0.0, "nu {nu}: score {s}");
        assert!(s[1].abs() > previous, "nu {nu}: |s2| {} after {previous}", s[1].abs());
        previous = s[1].abs();
    }
}
