//! Exact true-posterior machinery: the Gaussian-mixture prior is
//! conjugate to the linear-Gaussian measurement model, so the posterior
//! is again a mixture with closed-form weights, means and covariances.
//! A brute-force grid oracle over tiny instances provides an independent
//! cross-check.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gmm::{Covariance, Gmm1d, GmmPrior};
use crate::tomo::{MeasurementOp, NoiseModel};

/// Where a posterior came from: enough to reproduce or audit it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorProvenance {
    pub sigma_y: f64,
    pub dim_meas: usize,
    pub dim_image: usize,
    /// The conditioning measurement vector.
    pub y: Vec<f64>,
}

/// The exact posterior mixture `p(x | y)` plus provenance and any
/// conditioning warnings raised while it was assembled.
#[derive(Debug, Clone)]
pub struct PosteriorGmm {
    pub gmm: GmmPrior,
    pub provenance: PosteriorProvenance,
    pub warnings: Vec<String>,
}

impl PosteriorGmm {
    /// i.i.d. exact posterior draws, reproducible per seed.
    pub fn sample(&self, n: usize, rng_seed: u64) -> Result<Vec<Array1<f64>>> {
        self.gmm.sample(n, rng_seed)
    }

    /// Analytic marginal of the posterior on one pixel.
    pub fn pixel_marginal(&self, pixel_index: usize) -> Result<Gmm1d> {
        self.gmm.marginal(pixel_index)
    }

    /// Serialize as the mixture JSON document with a provenance block.
    pub fn to_json(&self) -> Result<String> {
        let gmm: serde_json::Value = serde_json::from_str(&self.gmm.to_json()?)?;
        let doc = serde_json::json!({
            "gmm": gmm,
            "provenance": self.provenance,
            "warnings": self.warnings,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let doc: serde_json::Value = serde_json::from_str(json)?;
        let gmm = GmmPrior::from_json(&serde_json::to_string(
            doc.get("gmm").ok_or_else(|| Error::Format("missing gmm block".into()))?,
        )?)?;
        let provenance = serde_json::from_value(
            doc.get("provenance")
                .ok_or_else(|| Error::Format("missing provenance block".into()))?
                .clone(),
        )?;
        let warnings = doc
            .get("warnings")
            .and_then(|w| serde_json::from_value(w.clone()).ok())
            .unwrap_or_default();
        Ok(Self { gmm, provenance, warnings })
    }
}

/// Threshold above which a posterior precision is flagged as
/// ill-conditioned (warning, not error).
const CONDITION_WARN: f64 = 1e12;

fn log_gaussian_eigen(
    resid: &Array1<f64>,
    vectors: &Array2<f64>,
    variances: &Array1<f64>,
) -> f64 {
    let t = vectors.t().dot(resid);
    let m = resid.len() as f64;
    let logdet: f64 = variances.iter().map(|v| v.ln()).sum();
    let maha: f64 = t.iter().zip(variances).map(|(ti, v)| ti * ti / v).sum();
    -0.5 * (m * crate::gmm::LOG_2PI + logdet + maha)
}

/// Closed-form conjugate posterior of a GMM prior under
/// `y = H x + eps`, `eps ~ N(0, sigma_y^2 I)`.
///
/// Per component: `Sigma'_k = (Sigma_k^{-1} + H^T H / sigma_y^2)^{-1}`,
/// `mu'_k = Sigma'_k (Sigma_k^{-1} mu_k + H^T y / sigma_y^2)`, and
/// `w'_k ∝ w_k N(y; H mu_k, H Sigma_k H^T + sigma_y^2 I)` normalized in
/// log-space. Priors whose components all share one isotropic covariance
/// reuse a single cached Gram eigendecomposition across components.
pub fn exact_posterior(
    prior: &GmmPrior,
    op: &dyn MeasurementOp,
    noise: &NoiseModel,
    y: &Array1<f64>,
) -> Result<PosteriorGmm> {
    let n = prior.dim();
    if op.dim_image() != n {
        return Err(crate::error::dim_mismatch(format!(
            "operator image dimension {} != prior dimension {}",
            op.dim_image(),
            n
        )));
    }
    if y.len() != op.dim_meas() {
        return Err(crate::error::dim_mismatch(format!(
            "measurement has {} entries, operator produces {}",
            y.len(),
            op.dim_meas()
        )));
    }
    let s_y2 = noise.sigma_y * noise.sigma_y;
    let mut warnings = Vec::new();

    let hty = op.adjoint(y)?;
    let meas_eigen = op.gram_meas_eigen()?;

    let mut log_weights = Vec::with_capacity(prior.num_components());
    let mut means = Vec::with_capacity(prior.num_components());
    let mut covs: Vec<Arc<Covariance>> = Vec::with_capacity(prior.num_components());

    if let Some(c) = prior.shared_isotropic_var() {
        // Fast path: one posterior covariance shared by every component.
        let img_eigen = op.gram_image_eigen()?;
        let post_eigvals = img_eigen.values.mapv(|d| 1.0 / (1.0 / c + d.max(0.0) / s_y2));
        let cond = post_eigvals.iter().cloned().fold(0.0, f64::max)
            / post_eigvals.iter().cloned().fold(f64::INFINITY, f64::min);
        if cond > CONDITION_WARN {
            warnings.push(format!("posterior covariance condition estimate {cond:.3e}"));
        }
        let post_cov = Arc::new(Covariance::from_eigen(
            img_eigen.vectors.clone(),
            post_eigvals,
        )?);
        let evid_vars = meas_eigen.values.mapv(|l| c * l.max(0.0) + s_y2);
        for (w, mu) in prior.weights().iter().zip(prior.means()) {
            let resid = y - &op.forward(mu)?;
            let logev = log_gaussian_eigen(&resid, &meas_eigen.vectors, &evid_vars);
            log_weights.push(w.ln() + logev);
            let b = mu / c + &hty / s_y2;
            means.push(post_cov.apply(&b));
            covs.push(Arc::clone(&post_cov));
        }
    } else {
        let h = op.dense()?;
        let hth = h.t().dot(h);
        for ((w, mu), cov) in prior.weights().iter().zip(prior.means()).zip(prior.covs()) {
            let prec = cov.inverse_matrix() + &(&hth / s_y2);
            let (prec_vals, prec_vecs) = prec.eigh(UPLO::Lower)?;
            if !prec_vals.iter().all(|v| *v > 0.0) {
                return Err(Error::NumericalFailure {
                    method: "exact_posterior".into(),
                    step: "precision eigendecomposition".into(),
                    detail: "non-positive posterior precision eigenvalue".into(),
                });
            }
            let cond = prec_vals.iter().cloned().fold(0.0, f64::max)
                / prec_vals.iter().cloned().fold(f64::INFINITY, f64::min);
            if cond > CONDITION_WARN {
                warnings.push(format!(
                    "posterior precision condition estimate {cond:.3e}"
                ));
            }
            let post_eigvals = prec_vals.mapv(|v| 1.0 / v);
            let post_cov = Covariance::from_eigen(prec_vecs, post_eigvals)?;
            let b = cov.solve_shifted(mu, 0.0) + &hty / s_y2;
            means.push(post_cov.apply(&b));

            // Evidence covariance H Sigma_k H^T + sigma_y^2 I, dense.
            let sigma_dense = cov.to_matrix();
            let mut s = h.dot(&sigma_dense).dot(&h.t());
            for i in 0..s.nrows() {
                s[[i, i]] += s_y2;
            }
            let (s_vals, s_vecs) = s.eigh(UPLO::Lower)?;
            let resid = y - &op.forward(mu)?;
            log_weights.push(
                w.ln() + log_gaussian_eigen(&resid, &s_vecs, &s_vals.mapv(|v| v.max(1e-300))),
            );
            covs.push(Arc::new(post_cov));
        }
    }

    let total = crate::gmm::log_sum_exp(&log_weights);
    let weights: Vec<f64> = if total.is_finite() {
        log_weights.iter().map(|lw| (lw - total).exp()).collect()
    } else {
        warnings.push(
            "all component evidences underflowed; falling back to uniform weights".into(),
        );
        vec![1.0 / log_weights.len() as f64; log_weights.len()]
    };
    // Guard against exact zeros after normalization: keep weights strictly
    // positive as the mixture type requires.
    let floor = 1e-300;
    let weights = weights.into_iter().map(|w| w.max(floor)).collect();

    Ok(PosteriorGmm {
        gmm: GmmPrior::new(weights, means, covs)?,
        provenance: PosteriorProvenance {
            sigma_y: noise.sigma_y,
            dim_meas: y.len(),
            dim_image: n,
            y: y.to_vec(),
        },
        warnings,
    })
}

/// Axis-aligned evaluation box for the brute-force grid oracle.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: usize,
}

impl GridSpec {
    /// A box centered on the prior mean covering `half_widths` standard
    /// deviations per coordinate.
    pub fn covering(prior: &GmmPrior, half_widths: f64, points: usize) -> Self {
        let mean = prior.mean();
        let vars = prior.coordinate_variances();
        let lo = mean
            .iter()
            .zip(&vars)
            .map(|(m, v)| m - half_widths * v.sqrt())
            .collect();
        let hi = mean
            .iter()
            .zip(&vars)
            .map(|(m, v)| m + half_widths * v.sqrt())
            .collect();
        Self { lo, hi, points }
    }

    fn axis(&self, d: usize) -> (f64, f64) {
        let step = (self.hi[d] - self.lo[d]) / (self.points - 1) as f64;
        (self.lo[d], step)
    }
}

/// A normalized density tabulated on a tensor grid (row-major over axes).
#[derive(Debug, Clone)]
pub struct GridPosterior {
    pub spec: GridSpec,
    pub dim: usize,
    pub density: Vec<f64>,
    /// Trapezoidal quadrature weight per grid node (product over axes).
    pub quad_weights: Vec<f64>,
}

impl GridPosterior {
    pub fn point(&self, flat: usize) -> Array1<f64> {
        let mut idx = flat;
        let mut x = Array1::zeros(self.dim);
        for d in (0..self.dim).rev() {
            let i = idx % self.spec.points;
            idx /= self.spec.points;
            let (lo, step) = self.spec.axis(d);
            x[d] = lo + step * i as f64;
        }
        x
    }

    pub fn integral(&self) -> f64 {
        self.density
            .iter()
            .zip(&self.quad_weights)
            .map(|(p, w)| p * w)
            .sum()
    }

    /// Total-variation distance against another density evaluator on the
    /// same grid.
    pub fn tv_against(&self, mut density: impl FnMut(&Array1<f64>) -> f64) -> f64 {
        // Normalize the comparison density over the same quadrature so TV
        // measures shape disagreement, not truncation mass.
        let other: Vec<f64> = (0..self.density.len())
            .map(|i| density(&self.point(i)))
            .collect();
        let z: f64 = other
            .iter()
            .zip(&self.quad_weights)
            .map(|(p, w)| p * w)
            .sum();
        0.5 * self
            .density
            .iter()
            .zip(&other)
            .zip(&self.quad_weights)
            .map(|((p, q), w)| w * (p - q / z).abs())
            .sum::<f64>()
    }
}

pub const GRID_ORACLE_MAX_DIM: usize = 3;

/// Brute-force posterior on a tensor grid: pointwise prior x likelihood,
/// normalized by trapezoidal quadrature. Only for `n <= 3`.
pub fn grid_posterior_oracle(
    prior: &GmmPrior,
    op: &dyn MeasurementOp,
    noise: &NoiseModel,
    y: &Array1<f64>,
    spec: &GridSpec,
) -> Result<GridPosterior> {
    let n = prior.dim();
    if n > GRID_ORACLE_MAX_DIM {
        return Err(Error::UnsupportedDimension { dim: n, max: GRID_ORACLE_MAX_DIM });
    }
    if spec.lo.len() != n || spec.hi.len() != n {
        return Err(crate::error::dim_mismatch("grid spec dimension mismatch"));
    }
    if spec.points < 2 {
        return Err(invalid("grid must have at least 2 points per axis"));
    }
    for d in 0..n {
        if !(spec.hi[d] > spec.lo[d]) {
            return Err(invalid("grid bounds must satisfy lo < hi"));
        }
    }
    let s_y2 = noise.sigma_y * noise.sigma_y;
    let m = op.dim_meas() as f64;
    let total = spec.points.pow(n as u32);

    let mut log_vals = Vec::with_capacity(total);
    let mut quad_weights = Vec::with_capacity(total);
    let steps: Vec<f64> = (0..n).map(|d| spec.axis(d).1).collect();
    let cell: f64 = steps.iter().product();

    for flat in 0..total {
        let mut idx = flat;
        let mut x = Array1::zeros(n);
        let mut w = cell;
        for d in (0..n).rev() {
            let i = idx % spec.points;
            idx /= spec.points;
            let (lo, step) = spec.axis(d);
            x[d] = lo + step * i as f64;
            if i == 0 || i == spec.points - 1 {
                w *= 0.5;
            }
        }
        let resid = y - &op.forward(&x)?;
        let log_lik =
            -0.5 * (m * crate::gmm::LOG_2PI + m * s_y2.ln() + resid.dot(&resid) / s_y2);
        log_vals.push(prior.log_pt(&x, 0.0)? + log_lik);
        quad_weights.push(w);
    }

    let max = log_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NumericalFailure {
            method: "grid_posterior_oracle".into(),
            step: "log density evaluation".into(),
            detail: "entire grid underflowed".into(),
        });
    }
    let mut density: Vec<f64> = log_vals.iter().map(|lv| (lv - max).exp()).collect();
    let z: f64 = density
        .iter()
        .zip(&quad_weights)
        .map(|(p, w)| p * w)
        .sum();
    for p in &mut density {
        *p /= z;
    }
    Ok(GridPosterior {
        spec: spec.clone(),
        dim: n,
        density,
        quad_weights,
    })
}
