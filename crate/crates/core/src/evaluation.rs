//! Sample-quality diagnostics: entropic optimal transport between sample
//! sets, histograms, empirical CDFs, Kolmogorov–Smirnov distances and
//! simple chain statistics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `λ · max C` for which the Gibbs kernel is scaled directly;
/// beyond it the iteration runs on log-potentials.
const SCALING_LIMIT: f64 = 300.0;

/// Settings for the entropy-regularized transport problem
/// `min Σ P C - h(P) / λ` with uniform marginals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtConfig {
    /// `λ`; the entropy term is weighted by `1/λ`.
    pub lambda: f64,
    pub max_iter: usize,
    /// Bound on the sup-norm marginal residual.
    pub tol: f64,
}

impl Default for OtConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            max_iter: 50_000,
            tol: 1e-9,
        }
    }
}

impl OtConfig {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be positive and finite"));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::invalid("tol must be positive and max_iter at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtResult {
    /// Regularized objective `Σ P C - h(P) / λ`.
    pub distance: f64,
    /// `Σ P C`.
    pub transport_cost: f64,
    /// `h(P) = -Σ P log P`.
    pub entropy: f64,
    /// Sup-norm deviation of the plan marginals from uniform.
    pub plan_residual: f64,
    pub iterations: usize,
}

/// Pairwise Euclidean distances between columns.
pub fn euclidean_cost(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: b.nrows(),
        });
    }
    if a.ncols() == 0 || b.ncols() == 0 {
        return Err(Error::invalid("sample sets must be nonempty"));
    }
    Ok(DMatrix::from_fn(a.ncols(), b.ncols(), |i, j| {
        a.column(i)
            .iter()
            .zip(b.column(j).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }))
}

/// Entropic OT between two equally weighted sample sets (columns).
pub fn entropic_ot(gen: &DMatrix<f64>, reference: &DMatrix<f64>, cfg: &OtConfig) -> Result<OtResult> {
    cfg.validate()?;
    let cost = euclidean_cost(gen, reference)?;
    ot_from_cost(&cost, cfg)
}

/// Entropic OT between two 1-D samples.
pub fn marginal_ot_1d(gen: &[f64], reference: &[f64], cfg: &OtConfig) -> Result<OtResult> {
    let a = DMatrix::from_row_slice(1, gen.len(), gen);
    let b = DMatrix::from_row_slice(1, reference.len(), reference);
    entropic_ot(&a, &b, cfg)
}

/// Sinkhorn–Knopp on a given cost matrix with uniform marginals. When the
/// iteration stalls (near-permutation plans at large `λ`), damped Newton
/// steps on the dual finish the solve.
pub fn ot_from_cost(cost: &DMatrix<f64>, cfg: &OtConfig) -> Result<OtResult> {
    cfg.validate()?;
    let (m, n) = cost.shape();
    if m == 0 || n == 0 {
        return Err(Error::invalid("cost matrix must be nonempty"));
    }
    if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::invalid("costs must be finite and nonnegative"));
    }
    let mut run = if cfg.lambda * cost.max() <= SCALING_LIMIT {
        scaling_sinkhorn(cost, cfg)
    } else {
        log_sinkhorn(cost, cfg)
    };
    if !run.converged && run.iterations < cfg.max_iter {
        run = newton_polish(cost, cfg, run);
    }
    if !run.converged {
        return Err(Error::NotConverged {
            iterations: run.iterations,
            residual: run.residual,
        });
    }
    Ok(summarize(cost, cfg.lambda, &run.log_u, &run.log_v, run.iterations))
}

/// Log-potentials of the plan `P_ij = exp(log_u_i - λ C_ij + log_v_j)`.
#[derive(Debug, Clone)]
struct SinkhornRun {
    log_u: Vec<f64>,
    log_v: Vec<f64>,
    iterations: usize,
    residual: f64,
    converged: bool,
}

/// Iterations between stall checks.
const STALL_WINDOW: usize = 200;

/// Tracks the residual every [`STALL_WINDOW`] iterations; a stall is less
/// than a tenfold decrease over one window.
struct StallMonitor {
    checkpoint: f64,
}

impl StallMonitor {
    fn new() -> Self {
        Self { checkpoint: f64::INFINITY }
    }

    fn stalled(&mut self, it: usize, residual: f64) -> bool {
        if it % STALL_WINDOW != 0 {
            return false;
        }
        let stalled = residual > 0.1 * self.checkpoint;
        self.checkpoint = residual;
        stalled
    }
}

fn scaling_sinkhorn(cost: &DMatrix<f64>, cfg: &OtConfig) -> SinkhornRun {
    let (m, n) = cost.shape();
    let (a, b) = (1.0 / m as f64, 1.0 / n as f64);
    let kernel = cost.map(|c| (-cfg.lambda * c).exp());
    let mut u = DVector::from_element(m, 1.0);
    let mut v = DVector::from_element(n, 1.0);
    let mut residual = f64::INFINITY;
    let mut monitor = StallMonitor::new();
    let logs = |u: &DVector<f64>, v: &DVector<f64>| -> (Vec<f64>, Vec<f64>) {
        (u.iter().map(|x| x.ln()).collect(), v.iter().map(|x| x.ln()).collect())
    };
    for it in 1..=cfg.max_iter {
        let ktu = kernel.tr_mul(&u);
        if it > 1 {
            residual = v.iter().zip(ktu.iter()).map(|(vj, s)| (vj * s - b).abs()).fold(0.0, f64::max);
            let converged = residual <= cfg.tol;
            if converged || monitor.stalled(it - 1, residual) {
                let (log_u, log_v) = logs(&u, &v);
                return SinkhornRun { log_u, log_v, iterations: it - 1, residual, converged };
            }
        }
        v = ktu.map(|s| b / s);
        let kv = &kernel * &v;
        u = kv.map(|s| a / s);
    }
    let (log_u, log_v) = logs(&u, &v);
    SinkhornRun { log_u, log_v, iterations: cfg.max_iter, residual, converged: false }
}

fn log_sinkhorn(cost: &DMatrix<f64>, cfg: &OtConfig) -> SinkhornRun {
    let (m, n) = cost.shape();
    let (log_a, log_b) = (-(m as f64).ln(), -(n as f64).ln());
    let b = 1.0 / n as f64;
    let lam = cfg.lambda;
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut buf = vec![0.0; m.max(n)];
    let mut col_lse = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut monitor = StallMonitor::new();
    for it in 1..=cfg.max_iter {
        for j in 0..n {
            let col = cost.column(j);
            for i in 0..m {
                buf[i] = f[i] - lam * col[i];
            }
            col_lse[j] = crate::linalg::log_sum_exp(&buf[..m]);
        }
        if it > 1 {
            // rows of the current plan are exact; check the columns
            residual = g
                .iter()
                .zip(&col_lse)
                .map(|(gj, l)| ((gj + l).exp() - b).abs())
                .fold(0.0, f64::max);
            let converged = residual <= cfg.tol;
            if converged || monitor.stalled(it - 1, residual) {
                return SinkhornRun { log_u: f, log_v: g, iterations: it - 1, residual, converged };
            }
        }
        for (gj, l) in g.iter_mut().zip(&col_lse) {
            *gj = log_b - l;
        }
        for i in 0..m {
            for j in 0..n {
                buf[j] = g[j] - lam * cost[(i, j)];
            }
            f[i] = log_a - crate::linalg::log_sum_exp(&buf[..n]);
        }
    }
    SinkhornRun { log_u: f, log_v: g, iterations: cfg.max_iter, residual, converged: false }
}

/// Plan entries and marginals at the given potentials.
fn plan(cost: &DMatrix<f64>, lam: f64, f: &[f64], g: &[f64]) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let p = DMatrix::from_fn(cost.nrows(), cost.ncols(), |i, j| (f[i] + g[j] - lam * cost[(i, j)]).exp());
    let rows = p.row_iter().map(|r| r.sum()).collect();
    let cols = p.column_iter().map(|c| c.sum()).collect();
    (p, rows, cols)
}

/// Dual objective `Σ a f + Σ b g - Σ P`; `-∞` when the plan overflows.
fn dual_value(cost: &DMatrix<f64>, lam: f64, f: &[f64], g: &[f64]) -> f64 {
    let (m, n) = cost.shape();
    let (a, b) = (1.0 / m as f64, 1.0 / n as f64);
    let mut mass = 0.0;
    for j in 0..n {
        for i in 0..m {
            mass += (f[i] + g[j] - lam * cost[(i, j)]).exp();
        }
    }
    if !mass.is_finite() {
        return f64::NEG_INFINITY;
    }
    a * f.iter().sum::<f64>() + b * g.iter().sum::<f64>() - mass
}

/// Damped Newton ascent on the dual. The `f` block is eliminated, leaving
/// the Schur complement `diag(c) - Pᵀ diag(r)⁻¹ P` for the `g` step, so the
/// dense solve is over the smaller side.
fn newton_polish(cost: &DMatrix<f64>, cfg: &OtConfig, run: SinkhornRun) -> SinkhornRun {
    if cost.ncols() > cost.nrows() {
        let swapped = SinkhornRun {
            log_u: run.log_v,
            log_v: run.log_u,
            ..run
        };
        let out = newton_polish(&cost.transpose(), cfg, swapped);
        return SinkhornRun {
            log_u: out.log_v,
            log_v: out.log_u,
            ..out
        };
    }
    let (m, n) = cost.shape();
    let (a, b) = (1.0 / m as f64, 1.0 / n as f64);
    let lam = cfg.lambda;
    let SinkhornRun {
        log_u: mut f,
        log_v: mut g,
        mut iterations,
        ..
    } = run;
    let mut residual = f64::INFINITY;
    while iterations < cfg.max_iter {
        let (p, r, c) = plan(cost, lam, &f, &g);
        let grad_f: Vec<f64> = r.iter().map(|ri| a - ri).collect();
        let grad_g: Vec<f64> = c.iter().map(|cj| b - cj).collect();
        residual = grad_f.iter().chain(&grad_g).fold(0.0, |acc, x| acc.max(x.abs()));
        if residual <= cfg.tol {
            return SinkhornRun { log_u: f, log_v: g, iterations, residual, converged: true };
        }
        iterations += 1;

        // Levenberg shift: keeps the system definite and the step an ascent
        // direction when the plan is close to a permutation
        let mu = residual.min(1e-3 * a.min(b)).max(1e-14 * a.min(b));
        let inv_r: Vec<f64> = r.iter().map(|ri| 1.0 / (ri + mu)).collect();
        let w = DMatrix::from_fn(m, n, |i, j| p[(i, j)] * inv_r[i].sqrt());
        let mut schur = -w.tr_mul(&w);
        for j in 0..n {
            schur[(j, j)] += c[j] + mu;
        }
        let scaled_gf = DVector::from_iterator(m, grad_f.iter().zip(&inv_r).map(|(x, ir)| x * ir));
        let rhs = DVector::from_vec(grad_g.clone()) - p.tr_mul(&scaled_gf);
        let dg = match schur.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => match schur.lu().solve(&rhs) {
                Some(x) => x,
                None => break,
            },
        };
        let pdg = &p * &dg;
        let df: Vec<f64> = (0..m).map(|i| (grad_f[i] - pdg[i]) * inv_r[i]).collect();

        let slope: f64 =
            grad_f.iter().zip(&df).map(|(x, y)| x * y).sum::<f64>() + grad_g.iter().zip(dg.iter()).map(|(x, y)| x * y).sum::<f64>();
        let base = dual_value(cost, lam, &f, &g);
        let mut t = 1.0;
        let accepted = loop {
            let fs: Vec<f64> = f.iter().zip(&df).map(|(x, d)| x + t * d).collect();
            let gs: Vec<f64> = g.iter().zip(dg.iter()).map(|(x, d)| x + t * d).collect();
            if dual_value(cost, lam, &fs, &gs) >= base + 1e-4 * t * slope {
                f = fs;
                g = gs;
                break true;
            }
            t *= 0.5;
            if t < 1e-10 {
                break false;
            }
        };
        if !accepted {
            break;
        }
    }
    SinkhornRun { log_u: f, log_v: g, iterations, residual, converged: false }
}

fn summarize(cost: &DMatrix<f64>, lambda: f64, log_u: &[f64], log_v: &[f64], iterations: usize) -> OtResult {
    let (m, n) = cost.shape();
    let mut row = vec![0.0; m];
    let mut col = vec![0.0; n];
    let mut transport = 0.0;
    let mut entropy = 0.0;
    for j in 0..n {
        for i in 0..m {
            let lp = log_u[i] - lambda * cost[(i, j)] + log_v[j];
            let p = lp.exp();
            if p > 0.0 {
                transport += p * cost[(i, j)];
                entropy -= p * lp;
                row[i] += p;
                col[j] += p;
            }
        }
    }
    let (a, b) = (1.0 / m as f64, 1.0 / n as f64);
    let plan_residual = row
        .iter()
        .map(|r| (r - a).abs())
        .chain(col.iter().map(|c| (c - b).abs()))
        .fold(0.0, f64::max);
    OtResult {
        distance: transport - entropy / lambda,
        transport_cost: transport,
        entropy,
        plan_residual,
        iterations,
    }
}

/// Equal-width histogram over `[lo, hi]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Counts normalized to sum to one.
    pub fn frequencies(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }
}

/// Histogram of `samples` in `n_bins` equal bins. Without a range the data
/// extent is used. Samples outside the range are dropped.
pub fn histogram(samples: &[f64], n_bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::invalid("histogram of empty sample"));
    }
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be at least 1"));
    }
    let (mut lo, mut hi) = match range {
        Some(r) => r,
        None => samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x))),
    };
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::invalid("histogram range must be finite and ordered"));
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / n_bins as f64;
    let edges = (0..=n_bins).map(|k| lo + k as f64 * width).collect();
    let mut counts = vec![0; n_bins];
    for &x in samples {
        if x < lo || x > hi || x.is_nan() {
            continue;
        }
        let k = (((x - lo) / width) as usize).min(n_bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Centered moving average with a window of `width` bins, shrinking at
/// the ends.
pub fn moving_average(values: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Indices of interior local maxima; on a plateau the first index is
/// reported. The end bins never count, so a lone outlier setting the
/// histogram range is not a mode.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[j + 1] == values[i] {
            j += 1;
        }
        let interior = i > 0 && j + 1 < n;
        if interior && values[i - 1] < values[i] && values[j + 1] < values[i] {
            out.push(i);
        }
        i = j + 1;
    }
    out
}

/// Mode locations: local maxima of a 50-bin histogram after a 3-bin
/// moving average.
pub fn histogram_modes(samples: &[f64]) -> Result<Vec<f64>> {
    let hist = histogram(samples, 50, None)?;
    let counts: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let smooth = moving_average(&counts, 3);
    let centers = hist.centers();
    Ok(local_maxima(&smooth).into_iter().map(|k| centers[k]).collect())
}

/// Right-continuous empirical distribution function.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn evaluate(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    /// Sorted sample values (the jump locations).
    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    /// Level reached at each sorted value.
    pub fn levels(&self) -> Vec<f64> {
        let n = self.sorted.len() as f64;
        (1..=self.sorted.len()).map(|k| k as f64 / n).collect()
    }
}

pub fn empirical_cdf(samples: &[f64]) -> Result<EmpiricalCdf> {
    if samples.is_empty() {
        return Err(Error::invalid("empirical CDF of empty sample"));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("NaN in sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(EmpiricalCdf { sorted })
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    let fa = empirical_cdf(a)?;
    let fb = empirical_cdf(b)?;
    let (sa, sb) = (fa.values(), fb.values());
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut sup = 0.0f64;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(sup)
}

/// Sample autocorrelation at `lag` (biased estimator).
pub fn autocorrelation(series: &[f64], lag: usize) -> Result<f64> {
    if lag >= series.len() {
        return Err(Error::invalid("lag must be smaller than the series length"));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    if var == 0.0 {
        return Err(Error::ZeroSpread);
    }
    let cov: f64 = series
        .iter()
        .zip(&series[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum();
    Ok(cov / var)
}

/// Mean and (population) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_points_give_their_distance() {
        let a = DMatrix::from_column_slice(2, 1, &[0.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        let r = entropic_ot(&a, &b, &OtConfig::default()).unwrap();
        assert!((r.transport_cost - 5.0).abs() < 1e-12);
        assert!(r.entropy.abs() < 1e-12);
        assert!((r.distance - 5.0).abs() < 1e-12);
    }

    #[test]
    fn matching_point_masses_cost_nearly_nothing() {
        let r = marginal_ot_1d(&[0.0, 1.0], &[0.0, 1.0], &OtConfig::default()).unwrap();
        assert!(r.transport_cost <= 0.05, "{r:?}");
        assert!(r.plan_residual <= 1e-9);
    }

    #[test]
    fn log_domain_agrees_with_scaling_domain() {
        let a = DMatrix::from_row_slice(1, 3, &[0.0, 0.4, 1.1]);
        let b = DMatrix::from_row_slice(1, 4, &[0.2, 0.5, 0.9, 1.3]);
        let cost = euclidean_cost(&a, &b).unwrap();
        let cfg = OtConfig::default().with_lambda(50.0);
        let run = scaling_sinkhorn(&cost, &cfg);
        assert!(run.converged);
        let direct = summarize(&cost, cfg.lambda, &run.log_u, &run.log_v, run.iterations);
        let run = log_sinkhorn(&cost, &cfg);
        assert!(run.converged);
        let logd = summarize(&cost, cfg.lambda, &run.log_u, &run.log_v, run.iterations);
        assert!((direct.distance - logd.distance).abs() < 1e-9);
        assert!((direct.transport_cost - logd.transport_cost).abs() < 1e-9);
        // far beyond the scaling limit the log domain takes over
        let r = ot_from_cost(&cost, &OtConfig::default().with_lambda(1e4)).unwrap();
        assert!(r.plan_residual <= 1e-9);
    }

    #[test]
    fn non_convergence_is_reported() {
        let a = DMatrix::from_row_slice(1, 3, &[0.0, 0.4, 1.1]);
        let cfg = OtConfig::default().with_max_iter(1);
        assert!(matches!(entropic_ot(&a, &a, &cfg), Err(Error::NotConverged { .. })));
        assert!(entropic_ot(&a, &DMatrix::zeros(1, 0), &OtConfig::default()).is_err());
        assert!(entropic_ot(&a, &a, &OtConfig::default().with_lambda(0.0)).is_err());
    }

    #[test]
    fn histogram_basics() {
        let h = histogram(&[2.0; 7], 10, None).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.total(), 7);
        let data: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let h = histogram(&data, 10, Some((0.0, 1.0))).unwrap();
        assert_eq!(h.total(), 100);
        let h = histogram(&data, 10, Some((0.0, 0.5))).unwrap();
        assert_eq!(h.total(), 50);
        assert!(histogram(&[], 10, None).is_err());
        assert!(histogram(&[1.0], 0, None).is_err());
    }

    #[test]
    fn maxima_detection() {
        assert_eq!(local_maxima(&[0.0, 1.0, 3.0, 1.0, 0.0, 2.0, 2.0, 1.0]), vec![2, 5]);
        assert_eq!(local_maxima(&[5.0, 4.0, 3.0]), Vec::<usize>::new());
        assert_eq!(local_maxima(&[1.0, 0.0, 0.0, 2.0, 5.0, 2.0]), vec![4]);
        assert_eq!(local_maxima(&[0.0, 0.0]), Vec::<usize>::new());
        assert_eq!(moving_average(&[3.0, 0.0, 3.0, 0.0], 3), vec![1.5, 2.0, 1.0, 1.5]);
    }

    #[test]
    fn cdf_and_ks_basics() {
        let c = empirical_cdf(&[1.5]).unwrap();
        assert_eq!(c.evaluate(1.4999), 0.0);
        assert_eq!(c.evaluate(1.5), 1.0);
        let c = empirical_cdf(&[3.0, 1.0, 2.0, 2.0]).unwrap();
        assert_eq!(c.evaluate(2.0), 0.75);
        assert_eq!(c.evaluate(3.0), 1.0);
        assert_eq!(c.levels(), vec![0.25, 0.5, 0.75, 1.0]);
        assert!(empirical_cdf(&[]).is_err());

        let a = [0.3, 0.1, 0.7];
        assert_eq!(ks_statistic(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_statistic(&a, &[5.0, 6.0]).unwrap(), 1.0);
        // hand count: F_a - F_b peaks at x = 1 with 2/3 - 0
        assert!((ks_statistic(&[0.0, 1.0, 2.0], &[1.5, 2.5]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn autocorrelation_of_alternating_series() {
        let s: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((autocorrelation(&s, 1).unwrap() + 0.99).abs() < 1e-12);
        assert!((autocorrelation(&s, 0).unwrap() - 1.0).abs() < 1e-12);
        assert!(autocorrelation(&[1.0; 5], 1).is_err());
    }
}
