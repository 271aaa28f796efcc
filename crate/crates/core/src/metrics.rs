//! The two posterior-quality criteria: normalized measurement
//! consistency (NMC) and posterior-prior similarity (PPS), the latter
//! realized as kernel MMD with a permutation null and as the
//! Gaussian-Fréchet distance, plus pixel-histogram utilities.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, invalid, Result};
use crate::gmm::Gmm1d;
use crate::tomo::{MeasurementOp, NoiseModel};

/// One benchmark cell, shaped like a row of the results table. Metric
/// fields are `None` for skipped or failed cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub p: usize,
    pub n: usize,
    pub nmc: Option<f64>,
    pub pps_mmd: Option<f64>,
    pub pps_mmd_null95: Option<f64>,
    pub pps_fd: Option<f64>,
    pub runtime_s: f64,
    pub failures: usize,
    /// "ok", "skipped", or "failed: <reason>".
    pub status: String,
}

pub const CSV_HEADER: &str = "method,p,N,nmc,pps_mmd,pps_mmd_null95,pps_fd,runtime_s,failures";

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.10e}")).unwrap_or_default()
}

impl EvalReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3},{}",
            self.method,
            self.p,
            self.n,
            csv_opt(self.nmc),
            csv_opt(self.pps_mmd),
            csv_opt(self.pps_mmd_null95),
            csv_opt(self.pps_fd),
            self.runtime_s,
            self.failures
        )
    }

    /// CSV row with the runtime column blanked, for byte-identical
    /// determinism comparisons.
    pub fn csv_row_without_runtime(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},,{}",
            self.method,
            self.p,
            self.n,
            csv_opt(self.nmc),
            csv_opt(self.pps_mmd),
            csv_opt(self.pps_mmd_null95),
            csv_opt(self.pps_fd),
            self.failures
        )
    }
}

/// Normalized average measurement consistency:
/// `sum_i ||y_i - H x_i||^2 / (N m_p sigma_y^2)`; 1 under the true
/// posterior.
pub fn nmc(
    samples: &[Array1<f64>],
    sinograms: &[Array1<f64>],
    op: &dyn MeasurementOp,
    noise: &NoiseModel,
) -> Result<f64> {
    if samples.is_empty() || samples.len() != sinograms.len() {
        return Err(invalid(
            "nmc needs equal-length nonempty sample and sinogram lists",
        ));
    }
    let m_p = op.dim_meas() as f64;
    let sy2 = noise.sigma_y * noise.sigma_y;
    let mut acc = 0.0;
    for (x, y) in samples.iter().zip(sinograms) {
        if y.len() != op.dim_meas() {
            return Err(dim_mismatch("sinogram length mismatch".to_string()));
        }
        let r = y - &op.forward(x)?;
        acc += r.dot(&r);
    }
    Ok(acc / (samples.len() as f64 * m_p * sy2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise distance over a deterministic pooled subsample.
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: Bandwidth,
}

impl KernelSpec {
    pub fn rbf_median() -> Self {
        Self { kind: KernelKind::Rbf, bandwidth: Bandwidth::MedianHeuristic }
    }

    pub fn linear() -> Self {
        Self { kind: KernelKind::Linear, bandwidth: Bandwidth::Fixed(1.0) }
    }

    pub fn validate(&self) -> Result<()> {
        if let Bandwidth::Fixed(b) = self.bandwidth {
            if !(b > 0.0) {
                return Err(invalid("kernel bandwidth must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MmdResult {
    /// Unbiased U-statistic estimate of squared MMD.
    pub estimate: f64,
    /// Sorted permutation-null estimates.
    pub null: Vec<f64>,
    pub bandwidth: Option<f64>,
}

impl MmdResult {
    /// Upper quantile of the permutation null, e.g. `quantile(0.95)`.
    pub fn null_quantile(&self, q: f64) -> f64 {
        let k = ((q * self.null.len() as f64).ceil() as usize)
            .clamp(1, self.null.len());
        self.null[k - 1]
    }
}

fn stack(rows: &[Array1<f64>]) -> Array2<f64> {
    let n = rows.len();
    let d = rows[0].len();
    let mut m = Array2::zeros((n, d));
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).assign(r);
    }
    m
}

/// Median pairwise Euclidean distance over a deterministic strided
/// subsample of at most 1000 pooled points.
fn median_bandwidth(sq_dists: &Array2<f64>, n_total: usize) -> f64 {
    let stride = n_total.div_ceil(1000);
    let idx: Vec<usize> = (0..n_total).step_by(stride).collect();
    let mut d: Vec<f64> = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in idx.iter().skip(a + 1) {
            d.push(sq_dists[[i, j]].max(0.0).sqrt());
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = d[d.len() / 2];
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Pooled kernel matrix plus (for RBF) the bandwidth actually used.
fn pooled_kernel(
    a: &[Array1<f64>],
    b: &[Array1<f64>],
    spec: &KernelSpec,
) -> Result<(Array2<f64>, Option<f64>)> {
    let pooled: Vec<&Array1<f64>> = a.iter().chain(b.iter()).collect();
    let n = pooled.len();
    let d = pooled[0].len();
    if pooled.iter().any(|v| v.len() != d) {
        return Err(dim_mismatch("mmd sets must share one dimension".to_string()));
    }
    let mut x = Array2::zeros((n, d));
    for (i, r) in pooled.iter().enumerate() {
        x.row_mut(i).assign(*r);
    }
    let gram = x.dot(&x.t());
    match spec.kind {
        KernelKind::Linear => Ok((gram, None)),
        KernelKind::Rbf => {
            let diag: Vec<f64> = (0..n).map(|i| gram[[i, i]]).collect();
            let mut sq = gram;
            for i in 0..n {
                for j in 0..n {
                    sq[[i, j]] = diag[i] + diag[j] - 2.0 * sq[[i, j]];
                }
            }
            let sigma = match spec.bandwidth {
                Bandwidth::Fixed(s) => s,
                Bandwidth::MedianHeuristic => median_bandwidth(&sq, n),
            };
            let denom = 2.0 * sigma * sigma;
            sq.mapv_inplace(|v| (-v.max(0.0) / denom).exp());
            Ok((sq, Some(sigma)))
        }
    }
}

/// Unbiased U-statistic squared MMD for one labeling of the pooled
/// kernel matrix: `labels[i]` true means "set A".
fn mmd2_from_kernel(k: &Array2<f64>, labels: &[bool], m: usize, n: usize) -> f64 {
    let mut saa = 0.0;
    let mut sbb = 0.0;
    let mut sab = 0.0;
    let t = labels.len();
    for i in 0..t {
        for j in (i + 1)..t {
            let v = k[[i, j]];
            match (labels[i], labels[j]) {
                (true, true) => saa += v,
                (false, false) => sbb += v,
                _ => sab += v,
            }
        }
    }
    let m = m as f64;
    let n = n as f64;
    2.0 * saa / (m * (m - 1.0)) + 2.0 * sbb / (n * (n - 1.0)) - 2.0 * sab / (m * n)
}

/// Unbiased squared-MMD estimate with a seeded permutation null.
pub fn mmd2(
    a: &[Array1<f64>],
    b: &[Array1<f64>],
    spec: &KernelSpec,
    permutations: usize,
    rng_seed: u64,
) -> Result<MmdResult> {
    spec.validate()?;
    if a.len() < 2 || b.len() < 2 {
        return Err(invalid("mmd needs at least 2 points per set"));
    }
    if permutations == 0 {
        return Err(invalid("mmd needs at least 1 permutation"));
    }
    let (kernel, bandwidth) = pooled_kernel(a, b, spec)?;
    let (m, n) = (a.len(), b.len());
    let t = m + n;
    let base: Vec<bool> = (0..t).map(|i| i < m).collect();
    let estimate = mmd2_from_kernel(&kernel, &base, m, n);

    let mut null: Vec<f64> = (0..permutations)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
            rng.set_stream(p as u64 + 1);
            let mut idx: Vec<usize> = (0..t).collect();
            idx.shuffle(&mut rng);
            let mut labels = vec![false; t];
            for &i in idx.iter().take(m) {
                labels[i] = true;
            }
            mmd2_from_kernel(&kernel, &labels, m, n)
        })
        .collect();
    null.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(MmdResult { estimate, null, bandwidth })
}

/// Biased (V-statistic) squared MMD; with the linear kernel it equals
/// the squared difference of sample means exactly.
pub fn mmd2_biased(a: &[Array1<f64>], b: &[Array1<f64>], spec: &KernelSpec) -> Result<f64> {
    spec.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(invalid("mmd needs nonempty sets"));
    }
    let (kernel, _) = pooled_kernel(a, b, spec)?;
    let (m, n) = (a.len() as f64, b.len() as f64);
    let mut saa = 0.0;
    let mut sbb = 0.0;
    let mut sab = 0.0;
    for i in 0..a.len() + b.len() {
        for j in 0..a.len() + b.len() {
            let v = kernel[[i, j]];
            match (i < a.len(), j < a.len()) {
                (true, true) => saa += v,
                (false, false) => sbb += v,
                (true, false) => sab += v,
                (false, true) => {}
            }
        }
    }
    Ok(saa / (m * m) + sbb / (n * n) - 2.0 * sab / (m * n))
}

fn moments(set: &[Array1<f64>]) -> (Array1<f64>, Array2<f64>) {
    let n = set.len() as f64;
    let d = set[0].len();
    let mut mean = Array1::<f64>::zeros(d);
    for x in set {
        mean += x;
    }
    mean /= n;
    let x = stack(set);
    let centered = &x - &mean.broadcast((set.len(), d)).unwrap();
    let mut cov = centered.t().dot(&centered) / n;
    for i in 0..d {
        cov[[i, i]] += 1e-6;
    }
    (mean, cov)
}

/// Symmetric square root with negative eigenvalues clamped to zero.
fn sym_sqrt(m: &Array2<f64>) -> Result<Array2<f64>> {
    let (vals, vecs) = m.eigh(UPLO::Lower)?;
    let scaled = &vecs * &vals.mapv(|v| v.max(0.0).sqrt().sqrt());
    Ok(scaled.dot(&scaled.t()))
}

/// Fréchet distance between Gaussian fits of two sample sets:
/// `||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2)`.
pub fn frechet_gaussian(a: &[Array1<f64>], b: &[Array1<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("frechet needs nonempty sets"));
    }
    if a[0].len() != b[0].len() {
        return Err(dim_mismatch("frechet sets must share one dimension".to_string()));
    }
    let (mu_a, cov_a) = moments(a);
    let (mu_b, cov_b) = moments(b);
    let dmu = &mu_a - &mu_b;
    let a_half = sym_sqrt(&cov_a)?;
    let inner = a_half.dot(&cov_b).dot(&a_half);
    let (vals, _) = inner.eigh(UPLO::Lower)?;
    let tr_cross: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    let tr_a: f64 = (0..cov_a.nrows()).map(|i| cov_a[[i, i]]).sum();
    let tr_b: f64 = (0..cov_b.nrows()).map(|i| cov_b[[i, i]]).sum();
    Ok((dmu.dot(&dmu) + tr_a + tr_b - 2.0 * tr_cross).max(0.0))
}

/// A normalized histogram over `bins` equal-width bins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges, ascending.
    pub edges: Vec<f64>,
    /// Bin masses summing to 1.
    pub mass: Vec<f64>,
}

/// Histogram of one pixel across a sample set.
pub fn pixel_histogram(
    samples: &[Array1<f64>],
    pixel_index: usize,
    bins: usize,
) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(invalid("histogram needs at least one sample"));
    }
    if bins < 2 {
        return Err(invalid("histogram needs at least 2 bins"));
    }
    if pixel_index >= samples[0].len() {
        return Err(invalid(format!(
            "pixel index {pixel_index} out of range for dimension {}",
            samples[0].len()
        )));
    }
    let vals: Vec<f64> = samples.iter().map(|s| s[pixel_index]).collect();
    let mut lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        // Degenerate (constant) samples: a token-width support.
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut mass = vec![0.0; bins];
    let unit = 1.0 / vals.len() as f64;
    for v in &vals {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        mass[k] += unit;
    }
    Ok(Histogram { edges, mass })
}

impl Histogram {
    /// CDF evaluated at `x` (piecewise linear within bins).
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.edges[0] {
            return 0.0;
        }
        let mut acc = 0.0;
        for (k, m) in self.mass.iter().enumerate() {
            let (l, r) = (self.edges[k], self.edges[k + 1]);
            if x >= r {
                acc += m;
            } else {
                acc += m * (x - l) / (r - l);
                break;
            }
        }
        acc.min(1.0)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.edges[0], *self.edges.last().unwrap())
    }
}

/// Exact 1-Wasserstein distance between two histograms: the integral of
/// `|F_a - F_b|`, where both CDFs are piecewise linear over the merged
/// edge set.
pub fn wasserstein1_hist(a: &Histogram, b: &Histogram) -> f64 {
    let mut edges: Vec<f64> = a.edges.iter().chain(b.edges.iter()).cloned().collect();
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
    edges.dedup();
    let mut total = 0.0;
    for w in edges.windows(2) {
        let (l, r) = (w[0], w[1]);
        if r <= l {
            continue;
        }
        let dl = a.cdf(l) - b.cdf(l);
        let dr = a.cdf(r) - b.cdf(r);
        // Both CDFs are linear on [l, r], so their difference is too;
        // integrate |linear| exactly, splitting at a sign change.
        total += if dl * dr >= 0.0 {
            0.5 * (dl.abs() + dr.abs()) * (r - l)
        } else {
            let t = dl.abs() / (dl.abs() + dr.abs());
            0.5 * (dl.abs() * t + dr.abs() * (1.0 - t)) * (r - l)
        };
    }
    total
}

/// 1-Wasserstein distance between a histogram and an analytic 1D
/// mixture, by fine quadrature of `|F_hist - F_gmm|` over the union of
/// supports.
pub fn wasserstein1_hist_gmm(h: &Histogram, g: &Gmm1d) -> f64 {
    let (hl, hr) = h.support();
    let spread = 8.0 * g.std();
    let lo = hl.min(g.mean() - spread);
    let hi = hr.max(g.mean() + spread);
    let steps = 20_000;
    let dx = (hi - lo) / steps as f64;
    let mut total = 0.0;
    for i in 0..steps {
        let x = lo + (i as f64 + 0.5) * dx;
        total += (h.cdf(x) - g.cdf(x)).abs() * dx;
    }
    total
}

/// Kolmogorov-Smirnov statistic of a sample against an analytic CDF.
pub fn ks_statistic(values: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        let f = cdf(*v);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{make_phantoms, make_prior_from_templates, Covariance, GmmPrior};
    use crate::oracle::exact_posterior;
    use crate::tomo::DenseOperator;
    use crate::ImageGrid;
    use rand::Rng;
    use std::sync::Arc;

    fn gaussian_draws(n: usize, dim: usize, mean: f64, std: f64, seed: u64) -> Vec<Array1<f64>> {
        let prior = GmmPrior::single(
            Array1::from_elem(dim, mean),
            Covariance::isotropic(dim, std * std).unwrap(),
        )
        .unwrap();
        prior.sample(n, seed).unwrap()
    }

    #[test]
    fn nmc_zero_on_exact_measurements() {
        let op = DenseOperator::identity(3);
        let noise = NoiseModel::new(0.2).unwrap();
        let xs = gaussian_draws(5, 3, 0.0, 1.0, 1);
        let ys: Vec<Array1<f64>> = xs.iter().map(|x| op.forward(x).unwrap()).collect();
        assert_eq!(nmc(&xs, &ys, &op, &noise).unwrap(), 0.0);
    }

    #[test]
    fn nmc_pure_noise_concentrates_at_one() {
        let m = 8;
        let op = DenseOperator::identity(m);
        let sigma_y = 0.3;
        let noise = NoiseModel::new(sigma_y).unwrap();
        let n = 2000;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let xs = vec![Array1::zeros(m); n];
        let ys: Vec<Array1<f64>> = (0..n)
            .map(|_| {
                Array1::from_iter(
                    (0..m).map(|_| sigma_y * rng.sample::<f64, _>(rand_distr::StandardNormal)),
                )
            })
            .collect();
        let v = nmc(&xs, &ys, &op, &noise).unwrap();
        let band = 3.0 * (2.0 / (n as f64 * m as f64)).sqrt();
        assert!((v - 1.0).abs() <= band, "nmc = {v}");
    }

    #[test]
    fn nmc_oracle_pairs_concentrate_at_one() {
        let grid = ImageGrid::new(4).unwrap();
        let templates = make_phantoms(grid, 2, 9).unwrap();
        let prior = make_prior_from_templates(&templates, 0.02).unwrap();
        let op = DenseOperator::identity(16);
        let noise = NoiseModel::new(0.1).unwrap();
        let n = 2000;
        let truths = prior.sample(n, 4).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for t in &truths {
            let y = op.forward(t).unwrap()
                + &Array1::from_iter((0..16).map(|_| {
                    noise.sigma_y * rng.sample::<f64, _>(rand_distr::StandardNormal)
                }));
            let post = exact_posterior(&prior, &op, &noise, &y).unwrap();
            xs.push(post.sample(1, rng.gen()).unwrap().remove(0));
            ys.push(y);
        }
        let v = nmc(&xs, &ys, &op, &noise).unwrap();
        let band = 3.0 * (2.0 / (n as f64 * 16.0)).sqrt();
        assert!((v - 1.0).abs() <= band, "nmc = {v}, band = {band}");
    }

    #[test]
    fn nmc_is_permutation_invariant_and_validates() {
        let op = DenseOperator::identity(2);
        let noise = NoiseModel::new(0.5).unwrap();
        let xs = gaussian_draws(4, 2, 0.0, 1.0, 7);
        let ys = gaussian_draws(4, 2, 0.5, 1.0, 8);
        let v = nmc(&xs, &ys, &op, &noise).unwrap();
        let perm = [2, 0, 3, 1];
        let xs_p: Vec<_> = perm.iter().map(|&i| xs[i].clone()).collect();
        let ys_p: Vec<_> = perm.iter().map(|&i| ys[i].clone()).collect();
        let v_p = nmc(&xs_p, &ys_p, &op, &noise).unwrap();
        assert!((v - v_p).abs() < 1e-14);

        assert!(nmc(&[], &[], &op, &noise).is_err());
        assert!(nmc(&xs, &ys[..2], &op, &noise).is_err());
    }

    #[test]
    fn linear_kernel_biased_mmd_is_squared_mean_difference() {
        let a = vec![Array1::from_vec(vec![0.0])];
        let b = vec![Array1::from_vec(vec![2.0])];
        let v = mmd2_biased(&a, &b, &KernelSpec::linear()).unwrap();
        assert!((v - 4.0).abs() < 1e-12);

        let a2 = gaussian_draws(50, 3, 0.2, 1.0, 1);
        let b2 = gaussian_draws(60, 3, -0.4, 0.5, 2);
        let v2 = mmd2_biased(&a2, &b2, &KernelSpec::linear()).unwrap();
        let (ma, _) = moments(&a2);
        let (mb, _) = moments(&b2);
        let d = &ma - &mb;
        assert!((v2 - d.dot(&d)).abs() <= 1e-12 * d.dot(&d).max(1.0));
    }

    #[test]
    fn mmd_is_symmetric_in_its_arguments() {
        let a = gaussian_draws(40, 2, 0.0, 1.0, 11);
        let b = gaussian_draws(50, 2, 0.3, 1.0, 12);
        let ab = mmd2(&a, &b, &KernelSpec::rbf_median(), 50, 5).unwrap();
        let ba = mmd2(&b, &a, &KernelSpec::rbf_median(), 50, 5).unwrap();
        assert!((ab.estimate - ba.estimate).abs() < 1e-12);
    }

    #[test]
    fn mmd_null_is_calibrated_on_identical_distributions() {
        let mut below = 0;
        let seeds = 10;
        for seed in 0..seeds {
            let pool = gaussian_draws(2000, 2, 0.0, 1.0, 100 + seed);
            let (a, b) = pool.split_at(1000);
            let r = mmd2(a, b, &KernelSpec::rbf_median(), 200, 77 + seed).unwrap();
            if r.estimate < r.null_quantile(0.95) {
                below += 1;
            }
        }
        assert!(below >= 9, "only {below}/{seeds} seeds below the 95% null");
    }

    #[test]
    fn mmd_detects_a_strong_mean_shift() {
        let a = gaussian_draws(500, 2, 0.0, 1.0, 31);
        let b = gaussian_draws(500, 2, 3.0, 1.0, 32);
        let r = mmd2(&a, &b, &KernelSpec::rbf_median(), 200, 9).unwrap();
        assert!(r.estimate > r.null_quantile(0.99));
    }

    #[test]
    fn mmd_rejects_tiny_sets() {
        let a = gaussian_draws(1, 2, 0.0, 1.0, 1);
        let b = gaussian_draws(5, 2, 0.0, 1.0, 2);
        assert!(mmd2(&a, &b, &KernelSpec::rbf_median(), 10, 0).is_err());
    }

    #[test]
    fn frechet_trivial_values() {
        let a = gaussian_draws(100, 3, 0.0, 1.0, 41);
        assert!(frechet_gaussian(&a, &a).unwrap() <= 1e-8);

        // Empirical moments exactly (0,1) vs (1,4) in 1D -> 1 + (1-2)^2.
        let x = vec![Array1::from_vec(vec![-1.0]), Array1::from_vec(vec![1.0])];
        let y = vec![Array1::from_vec(vec![-1.0]), Array1::from_vec(vec![3.0])];
        let v = frechet_gaussian(&x, &y).unwrap();
        assert!((v - 2.0).abs() < 1e-5, "fd = {v}");
    }

    #[test]
    fn frechet_invariant_under_common_rotation() {
        let a = gaussian_draws(200, 2, 0.3, 1.0, 51);
        let b = gaussian_draws(200, 2, -0.1, 0.7, 52);
        let base = frechet_gaussian(&a, &b).unwrap();
        let theta = 0.7f64;
        let rot = |v: &Array1<f64>| {
            Array1::from_vec(vec![
                theta.cos() * v[0] - theta.sin() * v[1],
                theta.sin() * v[0] + theta.cos() * v[1],
            ])
        };
        let ar: Vec<_> = a.iter().map(rot).collect();
        let br: Vec<_> = b.iter().map(rot).collect();
        let rotated = frechet_gaussian(&ar, &br).unwrap();
        assert!((base - rotated).abs() <= 1e-8 * base.max(1.0));
    }

    #[test]
    fn frechet_discriminates_a_mean_shift_on_images() {
        // Covariance-estimation noise at dim 1024 sets the baseline; the
        // benchmark's default jitter c = 1e-3 keeps it well under the
        // mean-shift signal (ratio ~1% at N = 5000, vs ~10% at c = 1e-2).
        let grid = ImageGrid::new(32).unwrap();
        let templates = make_phantoms(grid, 3, 2).unwrap();
        let prior = make_prior_from_templates(&templates, 0.001).unwrap();
        let a = prior.sample(5000, 61).unwrap();
        let b = prior.sample(5000, 62).unwrap();
        let shifted: Vec<Array1<f64>> = b.iter().map(|v| v + 0.1).collect();
        let same = frechet_gaussian(&a, &b).unwrap();
        let far = frechet_gaussian(&a, &shifted).unwrap();
        assert!(same <= 0.05 * far, "same = {same}, far = {far}");
    }

    #[test]
    fn histogram_contract() {
        let samples = vec![Array1::from_vec(vec![0.5]); 10];
        let h = pixel_histogram(&samples, 0, 4).unwrap();
        assert_eq!(h.mass.iter().filter(|m| **m > 0.0).count(), 1);
        assert!((h.mass.iter().sum::<f64>() - 1.0).abs() <= 1e-12);

        let varied = gaussian_draws(5000, 2, 0.0, 1.0, 71);
        let h2 = pixel_histogram(&varied, 1, 64).unwrap();
        assert!((h2.mass.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert_eq!(h2.edges.len(), 65);

        assert!(pixel_histogram(&varied, 5, 10).is_err());
        assert!(pixel_histogram(&varied, 0, 1).is_err());
        assert!(pixel_histogram(&[], 0, 4).is_err());
    }

    #[test]
    fn histogram_matches_oracle_marginal() {
        let prior = GmmPrior::new(
            vec![0.4, 0.6],
            vec![Array1::from_vec(vec![-0.5, 0.2]), Array1::from_vec(vec![0.8, -0.3])],
            vec![
                Arc::new(Covariance::isotropic(2, 0.1).unwrap()),
                Arc::new(Covariance::isotropic(2, 0.2).unwrap()),
            ],
        )
        .unwrap();
        let op = DenseOperator::identity(2);
        let noise = NoiseModel::new(0.6).unwrap();
        let post =
            exact_posterior(&prior, &op, &noise, &Array1::from_vec(vec![0.3, 0.0])).unwrap();
        let samples = post.sample(10_000, 81).unwrap();
        let h = pixel_histogram(&samples, 0, 100).unwrap();
        let marg = post.pixel_marginal(0).unwrap();
        let w1 = wasserstein1_hist_gmm(&h, &marg);
        assert!(w1 <= 0.02 * marg.std(), "w1 = {w1}");
    }

    #[test]
    fn wasserstein_identities() {
        let samples = gaussian_draws(1000, 1, 0.0, 1.0, 91);
        let h = pixel_histogram(&samples, 0, 50).unwrap();
        assert_eq!(wasserstein1_hist(&h, &h), 0.0);

        // Point masses at 0 and at a: distance a.
        let pa = pixel_histogram(&vec![Array1::from_vec(vec![0.0]); 5], 0, 2).unwrap();
        let pb = pixel_histogram(&vec![Array1::from_vec(vec![2.5]); 5], 0, 2).unwrap();
        let d = wasserstein1_hist(&pa, &pb);
        assert!((d - 2.5).abs() <= 0.01, "d = {d}");
    }

    #[test]
    fn wasserstein_of_unit_mean_shift() {
        let a = gaussian_draws(100_000, 1, 0.0, 1.0, 95);
        let b = gaussian_draws(100_000, 1, 1.0, 1.0, 96);
        let ha = pixel_histogram(&a, 0, 200).unwrap();
        let hb = pixel_histogram(&b, 0, 200).unwrap();
        let d = wasserstein1_hist(&ha, &hb);
        assert!((d - 1.0).abs() <= 0.02, "d = {d}");
    }

    #[test]
    fn ks_statistic_sanity() {
        let prior = GmmPrior::single(
            Array1::zeros(1),
            Covariance::isotropic(1, 1.0).unwrap(),
        )
        .unwrap();
        let marg = prior.marginal(0).unwrap();
        let vals: Vec<f64> = prior.sample(5000, 33).unwrap().iter().map(|s| s[0]).collect();
        let d = ks_statistic(&vals, |x| marg.cdf(x));
        assert!(d < 1.628 / (5000f64).sqrt(), "ks = {d}");

        let shifted: Vec<f64> = vals.iter().map(|v| v + 1.0).collect();
        let d2 = ks_statistic(&shifted, |x| marg.cdf(x));
        assert!(d2 > 0.3);
    }

    #[test]
    fn csv_rows_have_fixed_columns() {
        let full = EvalReport {
            method: "dps".into(),
            p: 6,
            n: 2000,
            nmc: Some(1.01),
            pps_mmd: Some(1e-4),
            pps_mmd_null95: Some(2e-4),
            pps_fd: Some(0.3),
            runtime_s: 12.5,
            failures: 0,
            status: "ok".into(),
        };
        assert_eq!(full.csv_row().split(',').count(), 9);
        let skipped = EvalReport {
            method: "pig".into(),
            p: 90,
            n: 2000,
            nmc: None,
            pps_mmd: None,
            pps_mmd_null95: None,
            pps_fd: None,
            runtime_s: 0.0,
            failures: 0,
            status: "skipped".into(),
        };
        let row = skipped.csv_row();
        assert_eq!(row.split(',').count(), 9);
        assert!(row.contains(",,,"));
    }
}

