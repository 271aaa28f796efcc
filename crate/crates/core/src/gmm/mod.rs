//! Analytic Gaussian-mixture prior: exact perturbed densities, scores,
//! Hessian-vector products and the Tweedie denoiser under the
//! variance-exploding perturbation kernel.

mod json;
mod phantoms;

pub use phantoms::{make_phantoms, PhantomTemplateSet};

use std::sync::Arc;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_mismatch, invalid, Result};
use crate::image::Image;

pub const LOG_2PI: f64 = 1.8378770664093453;

/// A symmetric positive definite covariance, factored at construction so
/// every `(Sigma + s^2 I)^{-1}` solve is a diagonal rescale.
#[derive(Debug, Clone)]
pub enum Covariance {
    Isotropic { dim: usize, var: f64 },
    Diagonal { diag: Array1<f64> },
    Full { eigvecs: Array2<f64>, eigvals: Array1<f64> },
}

impl Covariance {
    pub fn isotropic(dim: usize, var: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(invalid(format!("covariance scale must be > 0, got {var}")));
        }
        if dim == 0 {
            return Err(invalid("covariance dimension must be >= 1"));
        }
        Ok(Self::Isotropic { dim, var })
    }

    pub fn diagonal(diag: Array1<f64>) -> Result<Self> {
        if diag.is_empty() || !diag.iter().all(|v| *v > 0.0) {
            return Err(invalid("diagonal covariance entries must all be > 0"));
        }
        Ok(Self::Diagonal { diag })
    }

    pub fn full(matrix: Array2<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(invalid("full covariance must be square"));
        }
        let asym = matrix
            .iter()
            .zip(matrix.t().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if asym > 1e-10 {
            return Err(invalid(format!("covariance not symmetric (max asym {asym:.2e})")));
        }
        let (eigvals, eigvecs) = matrix.eigh(UPLO::Lower)?;
        if !eigvals.iter().all(|v| *v > 0.0) {
            return Err(invalid("covariance is not positive definite"));
        }
        Ok(Self::Full { eigvecs, eigvals })
    }

    /// Build directly from an eigendecomposition (all eigenvalues > 0).
    pub fn from_eigen(eigvecs: Array2<f64>, eigvals: Array1<f64>) -> Result<Self> {
        if !eigvals.iter().all(|v| *v > 0.0) {
            return Err(invalid("covariance is not positive definite"));
        }
        if eigvecs.nrows() != eigvals.len() || eigvecs.ncols() != eigvals.len() {
            return Err(dim_mismatch("eigenvector matrix shape"));
        }
        Ok(Self::Full { eigvecs, eigvals })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Isotropic { dim, .. } => *dim,
            Self::Diagonal { diag } => diag.len(),
            Self::Full { eigvals, .. } => eigvals.len(),
        }
    }

    pub fn min_eig(&self) -> f64 {
        match self {
            Self::Isotropic { var, .. } => *var,
            Self::Diagonal { diag } => diag.iter().cloned().fold(f64::INFINITY, f64::min),
            Self::Full { eigvals, .. } => eigvals.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn max_eig(&self) -> f64 {
        match self {
            Self::Isotropic { var, .. } => *var,
            Self::Diagonal { diag } => diag.iter().cloned().fold(0.0, f64::max),
            Self::Full { eigvals, .. } => eigvals.iter().cloned().fold(0.0, f64::max),
        }
    }

    pub fn logdet_shifted(&self, s2: f64) -> f64 {
        match self {
            Self::Isotropic { dim, var } => *dim as f64 * (var + s2).ln(),
            Self::Diagonal { diag } => diag.iter().map(|v| (v + s2).ln()).sum(),
            Self::Full { eigvals, .. } => eigvals.iter().map(|v| (v + s2).ln()).sum(),
        }
    }

    /// `(Sigma + s^2 I)^{-1} v`.
    pub fn solve_shifted(&self, v: &Array1<f64>, s2: f64) -> Array1<f64> {
        match self {
            Self::Isotropic { var, .. } => v / (var + s2),
            Self::Diagonal { diag } => v / &diag.mapv(|d| d + s2),
            Self::Full { eigvecs, eigvals } => {
                let mut u = eigvecs.t().dot(v);
                u.zip_mut_with(eigvals, |ui, l| *ui /= l + s2);
                eigvecs.dot(&u)
            }
        }
    }

    /// `Sigma v`.
    pub fn apply(&self, v: &Array1<f64>) -> Array1<f64> {
        match self {
            Self::Isotropic { var, .. } => v * *var,
            Self::Diagonal { diag } => v * diag,
            Self::Full { eigvecs, eigvals } => {
                let mut u = eigvecs.t().dot(v);
                u.zip_mut_with(eigvals, |ui, l| *ui *= *l);
                eigvecs.dot(&u)
            }
        }
    }

    /// `Sigma (Sigma + s^2 I)^{-1} v` — the Tweedie conditional-mean map.
    pub fn cond_mean_apply(&self, v: &Array1<f64>, s2: f64) -> Array1<f64> {
        match self {
            Self::Isotropic { var, .. } => v * (var / (var + s2)),
            Self::Diagonal { diag } => v * &diag.mapv(|d| d / (d + s2)),
            Self::Full { eigvecs, eigvals } => {
                let mut u = eigvecs.t().dot(v);
                u.zip_mut_with(eigvals, |ui, l| *ui *= l / (l + s2));
                eigvecs.dot(&u)
            }
        }
    }

    /// Conditional covariance of `x0 | x_t`: `s^2 Sigma (Sigma + s^2 I)^{-1}`.
    pub fn cond_cov(&self, s2: f64) -> Covariance {
        match self {
            Self::Isotropic { dim, var } => Self::Isotropic {
                dim: *dim,
                var: s2 * var / (var + s2),
            },
            Self::Diagonal { diag } => Self::Diagonal {
                diag: diag.mapv(|d| s2 * d / (d + s2)),
            },
            Self::Full { eigvecs, eigvals } => Self::Full {
                eigvecs: eigvecs.clone(),
                eigvals: eigvals.mapv(|l| s2 * l / (l + s2)),
            },
        }
    }

    /// `Sigma^{1/2} z` for sampling.
    pub fn sqrt_apply(&self, z: &Array1<f64>) -> Array1<f64> {
        match self {
            Self::Isotropic { var, .. } => z * var.sqrt(),
            Self::Diagonal { diag } => z * &diag.mapv(f64::sqrt),
            Self::Full { eigvecs, eigvals } => {
                let mut u = eigvecs.t().dot(z);
                u.zip_mut_with(eigvals, |ui, l| *ui *= l.sqrt());
                eigvecs.dot(&u)
            }
        }
    }

    /// Variance of coordinate `i`.
    pub fn diag_entry(&self, i: usize) -> f64 {
        match self {
            Self::Isotropic { var, .. } => *var,
            Self::Diagonal { diag } => diag[i],
            Self::Full { eigvecs, eigvals } => eigvecs
                .row(i)
                .iter()
                .zip(eigvals)
                .map(|(q, l)| q * q * l)
                .sum(),
        }
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        let n = self.dim();
        match self {
            Self::Isotropic { var, .. } => Array2::eye(n) * *var,
            Self::Diagonal { diag } => Array2::from_diag(diag),
            Self::Full { eigvecs, eigvals } => {
                let scaled = eigvecs * &eigvals.mapv(f64::sqrt);
                scaled.dot(&scaled.t())
            }
        }
    }

    /// Precision matrix `Sigma^{-1}`.
    pub fn inverse_matrix(&self) -> Array2<f64> {
        let n = self.dim();
        match self {
            Self::Isotropic { var, .. } => Array2::eye(n) / *var,
            Self::Diagonal { diag } => Array2::from_diag(&diag.mapv(|d| 1.0 / d)),
            Self::Full { eigvecs, eigvals } => {
                let scaled = eigvecs * &eigvals.mapv(|l| 1.0 / l.sqrt());
                scaled.dot(&scaled.t())
            }
        }
    }
}

/// Per-component pieces of the perturbed mixture at one evaluation point.
struct CompEval {
    log_dens: f64,
    /// `(Sigma_k + s^2 I)^{-1} (x - mu_k)`; the component score is its negation.
    pdiff: Array1<f64>,
}

/// A Gaussian-mixture prior over images.
#[derive(Debug, Clone)]
pub struct GmmPrior {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    means: Vec<Array1<f64>>,
    covs: Vec<Arc<Covariance>>,
    dim: usize,
}

pub fn log_sum_exp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl GmmPrior {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Array1<f64>>,
        covs: Vec<Arc<Covariance>>,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covs.len() {
            return Err(invalid("weights, means and covariances must have equal nonzero length"));
        }
        if !weights.iter().all(|w| *w > 0.0) {
            return Err(invalid("mixture weights must be > 0"));
        }
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(invalid("mixture weights must sum to a positive finite value"));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        let dim = means[0].len();
        for m in &means {
            if m.len() != dim {
                return Err(dim_mismatch("all means must share one dimension"));
            }
        }
        for c in &covs {
            if c.dim() != dim {
                return Err(dim_mismatch("covariance dimension must match means"));
            }
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            weights,
            log_weights,
            means,
            covs,
            dim,
        })
    }

    pub fn single(mean: Array1<f64>, cov: Covariance) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![Arc::new(cov)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Array1<f64>] {
        &self.means
    }

    pub fn covs(&self) -> &[Arc<Covariance>] {
        &self.covs
    }

    /// Shared isotropic variance when every component is `c I` with the
    /// same `c` — the fast conjugate path.
    pub fn shared_isotropic_var(&self) -> Option<f64> {
        let mut found = None;
        for c in &self.covs {
            match **c {
                Covariance::Isotropic { var, .. } => match found {
                    None => found = Some(var),
                    Some(v) if v == var => {}
                    _ => return None,
                },
                _ => return None,
            }
        }
        found
    }

    fn check_point(&self, x: &Array1<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(dim_mismatch(format!(
                "point has dimension {}, mixture has {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn eval_components(&self, x: &Array1<f64>, sigma_t: f64) -> Vec<CompEval> {
        let s2 = sigma_t * sigma_t;
        let n = self.dim as f64;
        self.means
            .iter()
            .zip(&self.covs)
            .map(|(mu, cov)| {
                let diff = x - mu;
                let pdiff = cov.solve_shifted(&diff, s2);
                let maha = diff.dot(&pdiff);
                let log_dens = -0.5 * (n * LOG_2PI + cov.logdet_shifted(s2) + maha);
                CompEval { log_dens, pdiff }
            })
            .collect()
    }

    fn log_resp(&self, evals: &[CompEval]) -> (Vec<f64>, f64) {
        let joint: Vec<f64> = evals
            .iter()
            .zip(&self.log_weights)
            .map(|(e, lw)| lw + e.log_dens)
            .collect();
        let total = log_sum_exp(&joint);
        (joint.iter().map(|j| j - total).collect(), total)
    }

    /// `log p_t(x)` for the mixture perturbed by `N(0, sigma_t^2 I)`.
    pub fn log_pt(&self, x: &Array1<f64>, sigma_t: f64) -> Result<f64> {
        self.check_point(x)?;
        let evals = self.eval_components(x, sigma_t);
        let (_, total) = self.log_resp(&evals);
        Ok(total)
    }

    /// Exact time-dependent score `grad_x log p_t(x)`.
    pub fn score_t(&self, x: &Array1<f64>, sigma_t: f64) -> Result<Array1<f64>> {
        self.check_point(x)?;
        let evals = self.eval_components(x, sigma_t);
        let (log_resp, _) = self.log_resp(&evals);
        let mut score = Array1::zeros(self.dim);
        for (e, lr) in evals.iter().zip(&log_resp) {
            score.scaled_add(-lr.exp(), &e.pdiff);
        }
        Ok(score)
    }

    /// Responsibilities `pi_k(x)` under the perturbed mixture.
    pub fn responsibilities(&self, x: &Array1<f64>, sigma_t: f64) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let evals = self.eval_components(x, sigma_t);
        let (log_resp, _) = self.log_resp(&evals);
        Ok(log_resp.iter().map(|lr| lr.exp()).collect())
    }

    /// Exact Hessian-vector product `(grad^2 log p_t)(x) v`.
    pub fn hessian_vec_t(&self, x: &Array1<f64>, sigma_t: f64, v: &Array1<f64>) -> Result<Array1<f64>> {
        self.check_point(x)?;
        self.check_point(v)?;
        let s2 = sigma_t * sigma_t;
        let evals = self.eval_components(x, sigma_t);
        let (log_resp, _) = self.log_resp(&evals);

        let mut score = Array1::<f64>::zeros(self.dim);
        let mut out = Array1::<f64>::zeros(self.dim);
        for ((e, lr), cov) in evals.iter().zip(&log_resp).zip(&self.covs) {
            let r = lr.exp();
            // -P_k v + g_k (g_k . v), with g_k = -pdiff.
            out.scaled_add(-r, &cov.solve_shifted(v, s2));
            out.scaled_add(r * e.pdiff.dot(v), &e.pdiff);
            score.scaled_add(-r, &e.pdiff);
        }
        out.scaled_add(-score.dot(v), &score);
        Ok(out)
    }

    /// Tweedie's denoised prediction `x + sigma_t^2 score = E[x0 | x_t]`.
    pub fn tweedie_denoise(&self, x_t: &Array1<f64>, sigma_t: f64) -> Result<Array1<f64>> {
        let score = self.score_t(x_t, sigma_t)?;
        Ok(x_t + &(score * (sigma_t * sigma_t)))
    }

    /// i.i.d. prior draws, reproducible per seed.
    pub fn sample(&self, n: usize, rng_seed: u64) -> Result<Vec<Array1<f64>>> {
        if n == 0 {
            return Err(invalid("sample count must be >= 1"));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
        Ok((0..n).map(|_| self.sample_one(&mut rng)).collect())
    }

    pub fn sample_one(&self, rng: &mut impl Rng) -> Array1<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let z = Array1::from_iter((0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.means[k] + &self.covs[k].sqrt_apply(&z)
    }

    /// Marginal of the mixture on one coordinate.
    pub fn marginal(&self, index: usize) -> Result<Gmm1d> {
        if index >= self.dim {
            return Err(invalid(format!(
                "pixel index {index} out of range for dimension {}",
                self.dim
            )));
        }
        Ok(Gmm1d {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m[index]).collect(),
            vars: self.covs.iter().map(|c| c.diag_entry(index)).collect(),
        })
    }

    /// Mixture mean.
    pub fn mean(&self) -> Array1<f64> {
        let mut m = Array1::zeros(self.dim);
        for (w, mu) in self.weights.iter().zip(&self.means) {
            m.scaled_add(*w, mu);
        }
        m
    }

    /// Per-coordinate variance of the mixture.
    pub fn coordinate_variances(&self) -> Array1<f64> {
        let mean = self.mean();
        let mut v = Array1::zeros(self.dim);
        for ((w, mu), cov) in self.weights.iter().zip(&self.means).zip(&self.covs) {
            for i in 0..self.dim {
                v[i] += w * (cov.diag_entry(i) + (mu[i] - mean[i]).powi(2));
            }
        }
        v
    }

    /// Largest per-coordinate standard deviation; drives the default
    /// `sigma_max` choice of the sampler.
    pub fn std_envelope(&self) -> f64 {
        self.coordinate_variances()
            .iter()
            .cloned()
            .fold(0.0, f64::max)
            .sqrt()
    }
}

/// A one-dimensional Gaussian mixture (pixel marginals).
#[derive(Debug, Clone)]
pub struct Gmm1d {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
}

impl Gmm1d {
    pub fn density(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.vars))
            .map(|(w, (m, v))| {
                w * (-0.5 * (x - m) * (x - m) / v).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
            })
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.vars))
            .map(|(w, (m, v))| {
                let z = (x - m) / (2.0 * v).sqrt();
                w * 0.5 * (1.0 + erf(z))
            })
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * m)
            .sum()
    }

    pub fn std(&self) -> f64 {
        let mean = self.mean();
        let second: f64 = self
            .weights
            .iter()
            .zip(self.means.iter().zip(&self.vars))
            .map(|(w, (m, v))| w * (v + m * m))
            .sum();
        (second - mean * mean).sqrt()
    }
}

/// Abramowitz-Stegun 7.1.26 style erf, accurate to ~1e-7; adequate for
/// CDF-based distances whose tolerances are >= 1e-3.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Uniform-weight GMM whose means are the phantom templates and whose
/// covariances are `c I`.
pub fn make_prior_from_templates(templates: &PhantomTemplateSet, c: f64) -> Result<GmmPrior> {
    if templates.templates.is_empty() {
        return Err(invalid("template set is empty"));
    }
    if !(c > 0.0) {
        return Err(invalid(format!("template jitter c must be > 0, got {c}")));
    }
    let k = templates.templates.len();
    let dim = templates.grid.n();
    let cov = Arc::new(Covariance::isotropic(dim, c)?);
    GmmPrior::new(
        vec![1.0 / k as f64; k],
        templates.templates.iter().map(|t| t.data.clone()).collect(),
        vec![cov; k],
    )
}

/// Convenience: wrap raw vectors as images on a grid.
pub fn vectors_as_images(grid: crate::image::ImageGrid, vecs: &[Array1<f64>]) -> Result<Vec<Image>> {
    vecs.iter()
        .map(|v| Image::new(grid, v.clone()))
        .collect()
}
