//! Variance-exploding ancestral sampler with pluggable conditional
//! guidance: three approximate likelihood-score terms (manifold-
//! constrained, posterior-sampling, and pseudo-inverse guidance) plus an
//! exact closed-form term available because the prior is a Gaussian
//! mixture.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gmm::{log_sum_exp, Covariance, GmmPrior, LOG_2PI};
use crate::oracle::{exact_posterior, PosteriorGmm};
use crate::tomo::{MeasurementOp, NoiseModel};


/// Geometric noise grid traversed from `sigma_max` down to `sigma_min`.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigmas: Vec<f64>,
}

/// `K` noise scales `sigma_i = sigma_min (sigma_max/sigma_min)^{t_i}`
/// with `t_i` equispaced on [0, 1], ordered decreasing.
pub fn make_schedule(sigma_min: f64, sigma_max: f64, k: usize) -> Result<NoiseSchedule> {
    if !(sigma_min > 0.0 && sigma_max > sigma_min) {
        return Err(invalid(format!(
            "need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
        )));
    }
    if k < 2 {
        return Err(invalid("schedule needs at least 2 noise scales"));
    }
    let ratio = sigma_max / sigma_min;
    let mut sigmas: Vec<f64> = (0..k)
        .map(|i| {
            let t = 1.0 - i as f64 / (k - 1) as f64;
            sigma_min * ratio.powf(t)
        })
        .collect();
    // Pin the endpoints exactly against powf round-off.
    sigmas[0] = sigma_max;
    sigmas[k - 1] = sigma_min;
    Ok(NoiseSchedule { sigma_min, sigma_max, sigmas })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMethod {
    None,
    Mcg,
    Dps,
    Pig,
    Exact,
}

impl GuidanceMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Mcg => "mcg",
            Self::Dps => "dps",
            Self::Pig => "pig",
            Self::Exact => "exact",
        }
    }
}

impl std::fmt::Display for GuidanceMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoInverseKind {
    /// Filtered back-projection surrogate (the fast default).
    Fbp,
    /// Exact Moore-Penrose via the cached SVD.
    Dense,
}

/// How the likelihood-score approximation is formed and weighted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub method: GuidanceMethod,
    /// Multiplier on the handcrafted step weight alpha. Zero is allowed
    /// (disables guidance while keeping the trajectory contract).
    #[serde(default = "default_alpha_scale")]
    pub alpha_scale: f64,
    /// Guard for alpha denominators.
    #[serde(default = "default_epsilon_denom")]
    pub epsilon_denom: f64,
    /// How the MCG back-lift realizes the pseudo-inverse.
    #[serde(default = "default_pseudo_inverse")]
    pub mcg_pseudo_inverse: PseudoInverseKind,
    /// Optional per-step data-consistency projection for MCG
    /// (off by default).
    #[serde(default)]
    pub mcg_projection: bool,
}

fn default_alpha_scale() -> f64 {
    1.0
}

fn default_epsilon_denom() -> f64 {
    1e-12
}

fn default_pseudo_inverse() -> PseudoInverseKind {
    PseudoInverseKind::Fbp
}

impl GuidanceConfig {
    pub fn new(method: GuidanceMethod) -> Self {
        Self {
            method,
            alpha_scale: default_alpha_scale(),
            epsilon_denom: default_epsilon_denom(),
            mcg_pseudo_inverse: default_pseudo_inverse(),
            mcg_projection: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_scale >= 0.0 && self.alpha_scale.is_finite()) {
            return Err(invalid("alpha_scale must be finite and >= 0"));
        }
        if !(self.epsilon_denom > 0.0) {
            return Err(invalid("epsilon_denom must be > 0"));
        }
        Ok(())
    }
}

/// A conditioning measurement: operator, noise level and data vector.
#[derive(Clone, Copy)]
pub struct Observation<'a> {
    pub op: &'a dyn MeasurementOp,
    pub noise: &'a NoiseModel,
    pub y: &'a Array1<f64>,
}

fn ensure_finite(v: &Array1<f64>, method: &str, step: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalFailure {
            method: method.into(),
            step: step.into(),
            detail: "non-finite value".into(),
        })
    }
}

/// `J v = (I + sigma_t^2 Hess log p_t) v`, the Tweedie Jacobian applied
/// analytically.
fn jacobian_apply(
    prior: &GmmPrior,
    x_t: &Array1<f64>,
    sigma_t: f64,
    v: &Array1<f64>,
) -> Result<Array1<f64>> {
    let hv = prior.hessian_vec_t(x_t, sigma_t, v)?;
    Ok(v + &(hv * (sigma_t * sigma_t)))
}

/// Manifold-constrained guidance: `alpha J H^dag (y - H xhat0)` with
/// `alpha = 0.1 alpha_scale / max(||H^dag r||, eps)`.
pub fn likelihood_score_mcg(
    x_t: &Array1<f64>,
    sigma_t: f64,
    obs: Observation<'_>,
    prior: &GmmPrior,
    cfg: &GuidanceConfig,
) -> Result<Array1<f64>> {
    let xhat0 = prior.tweedie_denoise(x_t, sigma_t)?;
    let resid = obs.y - &obs.op.forward(&xhat0)?;
    let back = match cfg.mcg_pseudo_inverse {
        PseudoInverseKind::Fbp => obs.op.pseudo_inverse(&resid)?,
        PseudoInverseKind::Dense => obs.op.moore_penrose(&resid)?,
    };
    ensure_finite(&back, "mcg", "pseudo-inverse back-lift")?;
    let norm = back.dot(&back).sqrt();
    let alpha = 0.1 * cfg.alpha_scale / norm.max(cfg.epsilon_denom);
    let out = jacobian_apply(prior, x_t, sigma_t, &back)? * alpha;
    ensure_finite(&out, "mcg", "jacobian application")?;
    Ok(out)
}

/// Posterior-sampling guidance: `alpha J H^T (y - H xhat0)` with
/// `alpha = alpha_scale / max(||r||, eps)`.
pub fn likelihood_score_dps(
    x_t: &Array1<f64>,
    sigma_t: f64,
    obs: Observation<'_>,
    prior: &GmmPrior,
    cfg: &GuidanceConfig,
) -> Result<Array1<f64>> {
    let xhat0 = prior.tweedie_denoise(x_t, sigma_t)?;
    let resid = obs.y - &obs.op.forward(&xhat0)?;
    let norm = resid.dot(&resid).sqrt();
    let alpha = cfg.alpha_scale / norm.max(cfg.epsilon_denom);
    let back = obs.op.adjoint(&resid)?;
    let out = jacobian_apply(prior, x_t, sigma_t, &back)? * alpha;
    ensure_finite(&out, "dps", "jacobian application")?;
    Ok(out)
}

/// Solve `(rt2 H H^T + sigma_y^2 I) z = r` with the cached Gram
/// eigendecomposition.
fn solve_meas_system(
    op: &dyn MeasurementOp,
    rt2: f64,
    sy2: f64,
    r: &Array1<f64>,
) -> Result<Array1<f64>> {
    let eig = op.gram_meas_eigen()?;
    let mut t = eig.vectors.t().dot(r);
    for (ti, l) in t.iter_mut().zip(&eig.values) {
        let denom = rt2 * l.max(0.0) + sy2;
        if !(denom > 0.0) {
            return Err(Error::NumericalFailure {
                method: "pig".into(),
                step: "measurement-space solve".into(),
                detail: format!("non-positive pivot {denom}"),
            });
        }
        *ti /= denom;
    }
    Ok(eig.vectors.dot(&t))
}

/// Pseudo-inverse guidance with the scheme's time weight
/// `r_t^2 = sigma_t^2 / (sigma_t^2 + 1)`.
pub fn likelihood_score_pig(
    x_t: &Array1<f64>,
    sigma_t: f64,
    obs: Observation<'_>,
    prior: &GmmPrior,
    cfg: &GuidanceConfig,
) -> Result<Array1<f64>> {
    let s2 = sigma_t * sigma_t;
    likelihood_score_pig_with_rt2(x_t, sigma_t, obs, prior, cfg, s2 / (s2 + 1.0))
}

/// Pseudo-inverse guidance with an explicit `r_t^2`, so the time weight
/// can be swapped for the true denoising variance in cross-checks.
pub fn likelihood_score_pig_with_rt2(
    x_t: &Array1<f64>,
    sigma_t: f64,
    obs: Observation<'_>,
    prior: &GmmPrior,
    cfg: &GuidanceConfig,
    rt2: f64,
) -> Result<Array1<f64>> {
    let xhat0 = prior.tweedie_denoise(x_t, sigma_t)?;
    let resid = obs.y - &obs.op.forward(&xhat0)?;
    let sy2 = obs.noise.sigma_y * obs.noise.sigma_y;
    let z = solve_meas_system(obs.op, rt2, sy2, &resid)?;
    let back = obs.op.adjoint(&z)?;
    let out = jacobian_apply(prior, x_t, sigma_t, &back)?;
    ensure_finite(&out, "pig", "jacobian application")?;
    Ok(out * cfg.alpha_scale)
}

/// Per-component pieces for the exact likelihood score.
struct ExactEval {
    /// log w_k + log N(x_t; mu_k, Sigma_k + s^2 I) + log N(y; H m_k, S_k)
    log_joint: f64,
    /// Component prior-score contribution `-(Sigma_k + s^2 I)^{-1}(x - mu_k)`.
    comp_score: Array1<f64>,
    /// `H^T S_k^{-1} (y - H m_k)`.
    lifted: Array1<f64>,
}

fn exact_components(
    x_t: &Array1<f64>,
    sigma_t: f64,
    obs: Observation<'_>,
    prior: &GmmPrior,
) -> Result<Vec<ExactEval>> {
    let s2 = sigma_t * sigma_t;
    let sy2 = obs.noise.sigma_y * obs.noise.sigma_y;
    let n = prior.dim() as f64;
    let m = obs.op.dim_meas() as f64;
    let mut out = Vec::with_capacity(prior.num_components());
    for ((w, mu), cov) in prior
        .weights()
        .iter()
        .zip(prior.means())
        .zip(prior.covs())
    {
        let diff = x_t - mu;
        let pdiff = cov.solve_shifted(&diff, s2);
        let log_nx = -0.5 * (n * LOG_2PI + cov.logdet_shifted(s2) + diff.dot(&pdiff));

        let m_k = mu + &cov.cond_mean_apply(&diff, s2);
        let resid = obs.y - &obs.op.forward(&m_k)?;
        let cond = cov.cond_cov(s2);
        let (log_ny, s_inv_resid) = match cond {
            crate::gmm::Covariance::Isotropic { var: gamma, .. } => {
                let eig = obs.op.gram_meas_eigen()?;
                let t = eig.vectors.t().dot(&resid);
                let mut logdet = 0.0;
                let mut scaled = t.clone();
                for (ti, l) in scaled.iter_mut().zip(&eig.values) {
                    let v = gamma * l.max(0.0) + sy2;
                    logdet += v.ln();
                    *ti /= v;
                }
                let maha = t.dot(&scaled);
                (
                    -0.5 * (m * LOG_2PI + logdet + maha),
                    eig.vectors.dot(&scaled),
                )
            }
            other => {
                let h = obs.op.dense()?;
                let mut s = h.dot(&other.to_matrix()).dot(&h.t());
                for i in 0..s.nrows() {
                    s[[i, i]] += sy2;
                }
                let (vals, vecs) = s.eigh(UPLO::Lower)?;
                let t = vecs.t().dot(&resid);
                let mut logdet = 0.0;
                let mut scaled = t.clone();
                for (ti, l) in scaled.iter_mut().zip(&vals) {
                    let v = l.max(1e-300);
                    logdet += v.ln();
                    *ti /= v;
                }
                let maha = t.dot(&scaled);
                (-0.5 * (m * LOG_2PI + logdet + maha), vecs.dot(&scaled))
            }
        };
        out.push(ExactEval {
            log_joint: w.ln() + log_nx + log_ny,
            comp_score: -pdiff,
            lifted: obs.op.adjoint(&s_inv_resid)?,
        });
    }
    Ok(out)
}

/// Exact `grad_{x_t} log p_t(y | x_t)` for the GMM prior: the gold
/// standard the three approximations target.
pub fn exact_likelihood_score(
    x_t: &Array1<f64>,
    sigma_t: f64,
    obs: Observation<'_>,
    prior: &GmmPrior,
) -> Result<Array1<f64>> {
    let s2 = sigma_t * sigma_t;
    let evals = exact_components(x_t, sigma_t, obs, prior)?;
    let joints: Vec<f64> = evals.iter().map(|e| e.log_joint).collect();
    let total = log_sum_exp(&joints);
    let prior_score = prior.score_t(x_t, sigma_t)?;
    let mut grad = -prior_score;
    for (e, cov) in evals.iter().zip(prior.covs()) {
        let rho = (e.log_joint - total).exp();
        grad.scaled_add(rho, &e.comp_score);
        grad.scaled_add(rho, &cov.cond_mean_apply(&e.lifted, s2));
    }
    Ok(grad)
}

/// Exact `log p_t(y | x_t)`, the antiderivative of
/// [`exact_likelihood_score`] used by finite-difference cross-checks.
pub fn exact_likelihood_logpdf(
    x_t: &Array1<f64>,
    sigma_t: f64,
    obs: Observation<'_>,
    prior: &GmmPrior,
) -> Result<f64> {
    let evals = exact_components(x_t, sigma_t, obs, prior)?;
    let joints: Vec<f64> = evals.iter().map(|e| e.log_joint).collect();
    Ok(log_sum_exp(&joints) - prior.log_pt(x_t, sigma_t)?)
}

/// Bundles everything the sampler needs to form the drift at one step.
/// For exact guidance the conjugate posterior is computed once up front
/// and its perturbed score is the whole drift.
pub struct GuidanceEngine<'a> {
    pub prior: &'a GmmPrior,
    pub cfg: GuidanceConfig,
    pub obs: Option<Observation<'a>>,
    posterior: Option<PosteriorGmm>,
}

impl<'a> GuidanceEngine<'a> {
    pub fn new(
        prior: &'a GmmPrior,
        cfg: GuidanceConfig,
        obs: Option<Observation<'a>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.method != GuidanceMethod::None && obs.is_none() {
            return Err(invalid(format!(
                "guidance method {} requires an observation",
                cfg.method
            )));
        }
        let posterior = match (cfg.method, obs) {
            (GuidanceMethod::Exact, Some(o)) => {
                Some(exact_posterior(prior, o.op, o.noise, o.y)?)
            }
            _ => None,
        };
        Ok(Self { prior, cfg, obs, posterior })
    }

    /// The exact posterior, when the engine runs exact guidance.
    pub fn posterior(&self) -> Option<&PosteriorGmm> {
        self.posterior.as_ref()
    }

    /// Total drift score `s_total(x, sigma_t)`: prior score plus the
    /// configured guidance term.
    pub fn total_score(&self, x_t: &Array1<f64>, sigma_t: f64) -> Result<Array1<f64>> {
        match self.cfg.method {
            GuidanceMethod::None => self.prior.score_t(x_t, sigma_t),
            GuidanceMethod::Exact => self
                .posterior
                .as_ref()
                .expect("posterior precomputed for exact guidance")
                .gmm
                .score_t(x_t, sigma_t),
            GuidanceMethod::Mcg => {
                let obs = self.obs.expect("observation checked at construction");
                let g = likelihood_score_mcg(x_t, sigma_t, obs, self.prior, &self.cfg)?;
                Ok(self.prior.score_t(x_t, sigma_t)? + &g)
            }
            GuidanceMethod::Dps => {
                let obs = self.obs.expect("observation checked at construction");
                let g = likelihood_score_dps(x_t, sigma_t, obs, self.prior, &self.cfg)?;
                Ok(self.prior.score_t(x_t, sigma_t)? + &g)
            }
            GuidanceMethod::Pig => {
                let obs = self.obs.expect("observation checked at construction");
                let g = likelihood_score_pig(x_t, sigma_t, obs, self.prior, &self.cfg)?;
                Ok(self.prior.score_t(x_t, sigma_t)? + &g)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SamplerOptions {
    /// Force every Wiener increment to zero (deterministic descent).
    pub zero_noise: bool,
    /// Start from a fixed state instead of `N(0, sigma_max^2 I)`.
    pub start: Option<Array1<f64>>,
}

fn run_chain(
    engine: &GuidanceEngine<'_>,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha12Rng,
    opts: &SamplerOptions,
    mut trace: Option<&mut Vec<Array1<f64>>>,
) -> Result<Array1<f64>> {
    if engine.cfg.method == GuidanceMethod::Exact {
        let gmm = &engine
            .posterior
            .as_ref()
            .expect("posterior precomputed for exact guidance")
            .gmm;
        return run_exact_chain(gmm, schedule, rng, opts, trace);
    }
    let n = engine.prior.dim();
    let method = engine.cfg.method.name();
    let mut x = match &opts.start {
        Some(x0) => {
            if x0.len() != n {
                return Err(crate::error::dim_mismatch(
                    "start state dimension mismatch".to_string(),
                ));
            }
            x0.clone()
        }
        None => {
            let z: Array1<f64> =
                Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
            z * schedule.sigma_max
        }
    };

    let k = schedule.sigmas.len();
    for i in 0..k - 1 {
        let s_cur = schedule.sigmas[i];
        let s_next = schedule.sigmas[i + 1];
        let drift = engine.total_score(&x, s_cur)?;
        let step_var = s_cur * s_cur - s_next * s_next;
        x.scaled_add(step_var, &drift);
        if !opts.zero_noise {
            let noise_std = (s_next * s_next * step_var / (s_cur * s_cur)).sqrt();
            for xi in x.iter_mut() {
                *xi += noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        if engine.cfg.method == GuidanceMethod::Mcg && engine.cfg.mcg_projection {
            let obs = engine.obs.expect("observation checked at construction");
            let resid = obs.y - &obs.op.forward(&x)?;
            let lift = match engine.cfg.mcg_pseudo_inverse {
                PseudoInverseKind::Fbp => obs.op.pseudo_inverse(&resid)?,
                PseudoInverseKind::Dense => obs.op.moore_penrose(&resid)?,
            };
            x += &lift;
        }
        ensure_finite(&x, method, &format!("ancestral step {i}"))?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(x.clone());
        }
    }

    // Terminal Tweedie denoise at sigma_min with the same total score.
    let final_score = engine.total_score(&x, schedule.sigma_min)?;
    x.scaled_add(schedule.sigma_min * schedule.sigma_min, &final_score);
    ensure_finite(&x, method, "terminal denoise")?;
    if let Some(t) = trace {
        t.push(x.clone());
    }
    Ok(x)
}

/// Diagonal form of a mixture whose components share one eigenbasis:
/// `basis = None` means the coordinate basis (isotropic/diagonal
/// covariances), otherwise all components share the rotation `Q`.
struct SharedDiagonal<'a> {
    basis: Option<&'a Array2<f64>>,
    /// Per-component eigenvalue (variance) vectors.
    vars: Vec<Array1<f64>>,
}

fn shared_diagonal_form(gmm: &GmmPrior) -> Option<SharedDiagonal<'_>> {
    let covs = gmm.covs();
    let coordinate_aligned = covs
        .iter()
        .all(|c| matches!(**c, Covariance::Isotropic { .. } | Covariance::Diagonal { .. }));
    if coordinate_aligned {
        let vars = covs
            .iter()
            .map(|c| match &**c {
                Covariance::Isotropic { dim, var } => Array1::from_elem(*dim, *var),
                Covariance::Diagonal { diag } => diag.clone(),
                Covariance::Full { .. } => unreachable!(),
            })
            .collect();
        return Some(SharedDiagonal { basis: None, vars });
    }
    // A single shared full covariance (Arc-aliased across components)
    // provides one common eigenbasis.
    let first = &covs[0];
    if covs.iter().all(|c| std::sync::Arc::ptr_eq(c, first)) {
        if let Covariance::Full { eigvecs, eigvals } = &**first {
            return Some(SharedDiagonal {
                basis: Some(eigvecs),
                vars: vec![eigvals.clone(); covs.len()],
            });
        }
    }
    None
}

fn categorical_draw(resp: &[f64], rng: &mut ChaCha12Rng, zero_noise: bool) -> usize {
    if zero_noise {
        let mut best = 0;
        for (k, r) in resp.iter().enumerate() {
            if *r > resp[best] {
                best = k;
            }
        }
        return best;
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, r) in resp.iter().enumerate() {
        acc += r;
        if u < acc {
            return k;
        }
    }
    resp.len() - 1
}

/// Exact ancestral chain for a mixture target: each reverse step draws
/// `x0` from the closed-form conditional `p(x0 | x_t)` and bridges to
/// the next noise scale, so every marginal is exact at any `K` (the
/// score-based update is the first-order approximation of this step).
/// The terminal step is an exact `x0` draw at `sigma_min`.
fn run_exact_chain(
    gmm: &GmmPrior,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha12Rng,
    opts: &SamplerOptions,
    mut trace: Option<&mut Vec<Array1<f64>>>,
) -> Result<Array1<f64>> {
    let n = gmm.dim();
    let init = |rng: &mut ChaCha12Rng| -> Array1<f64> {
        Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
            * schedule.sigma_max
    };
    let k_steps = schedule.sigmas.len();

    if let Some(diag) = shared_diagonal_form(gmm) {
        // Work in the shared eigenbasis, where every conditional draw is
        // a coordinate-wise operation.
        let rotate = |v: &Array1<f64>| match diag.basis {
            Some(q) => q.t().dot(v),
            None => v.clone(),
        };
        let rotate_back = |v: &Array1<f64>| match diag.basis {
            Some(q) => q.dot(v),
            None => v.clone(),
        };
        let means_u: Vec<Array1<f64>> = gmm.means().iter().map(&rotate).collect();
        let log_weights: Vec<f64> = gmm.weights().iter().map(|w| w.ln()).collect();

        let mut u = match &opts.start {
            Some(x0) => {
                if x0.len() != n {
                    return Err(crate::error::dim_mismatch(
                        "start state dimension mismatch".to_string(),
                    ));
                }
                rotate(x0)
            }
            // N(0, sigma_max^2 I) is rotation-invariant.
            None => init(rng),
        };

        let responsibilities = |u: &Array1<f64>, s2: f64| -> Vec<f64> {
            let logs: Vec<f64> = (0..means_u.len())
                .map(|k| {
                    let m = &means_u[k];
                    let v = &diag.vars[k];
                    let mut acc = log_weights[k];
                    for i in 0..n {
                        let tv = v[i] + s2;
                        let d = u[i] - m[i];
                        acc -= 0.5 * (LOG_2PI + tv.ln() + d * d / tv);
                    }
                    acc
                })
                .collect();
            let total = log_sum_exp(&logs);
            logs.iter().map(|l| (l - total).exp()).collect()
        };

        let draw_x0 = |u: &Array1<f64>, s2: f64, rng: &mut ChaCha12Rng, zero_noise: bool| {
            let resp = responsibilities(u, s2);
            let k = categorical_draw(&resp, rng, zero_noise);
            let m = &means_u[k];
            let v = &diag.vars[k];
            Array1::from_iter((0..n).map(|i| {
                let gain = v[i] / (v[i] + s2);
                let mean = m[i] + gain * (u[i] - m[i]);
                if zero_noise {
                    mean
                } else {
                    let std = (s2 * gain).sqrt();
                    mean + std * rng.sample::<f64, _>(StandardNormal)
                }
            }))
        };

        for i in 0..k_steps - 1 {
            let s_cur = schedule.sigmas[i];
            let s_next = schedule.sigmas[i + 1];
            let u0 = draw_x0(&u, s_cur * s_cur, rng, opts.zero_noise);
            let ratio = (s_next * s_next) / (s_cur * s_cur);
            let bridge_std = s_next * (1.0 - ratio).sqrt();
            for j in 0..n {
                u[j] = u0[j] + ratio * (u[j] - u0[j]);
                if !opts.zero_noise {
                    u[j] += bridge_std * rng.sample::<f64, _>(StandardNormal);
                }
            }
            ensure_finite(&u, "exact", &format!("ancestral step {i}"))?;
            if let Some(t) = trace.as_deref_mut() {
                t.push(rotate_back(&u));
            }
        }
        let u0 = draw_x0(&u, schedule.sigma_min * schedule.sigma_min, rng, opts.zero_noise);
        let x = rotate_back(&u0);
        ensure_finite(&x, "exact", "terminal draw")?;
        if let Some(t) = trace {
            t.push(x.clone());
        }
        return Ok(x);
    }

    // Generic path (components with unrelated full covariances): uses
    // the mixture machinery directly; intended for small instances.
    let mut x = match &opts.start {
        Some(x0) => {
            if x0.len() != n {
                return Err(crate::error::dim_mismatch(
                    "start state dimension mismatch".to_string(),
                ));
            }
            x0.clone()
        }
        None => init(rng),
    };
    let draw_x0 = |x: &Array1<f64>, s: f64, rng: &mut ChaCha12Rng, zero_noise: bool| -> Result<Array1<f64>> {
        let s2 = s * s;
        let resp = gmm.responsibilities(x, s)?;
        let k = categorical_draw(&resp, rng, zero_noise);
        let cov = &gmm.covs()[k];
        let mean = &gmm.means()[k] + &cov.cond_mean_apply(&(x - &gmm.means()[k]), s2);
        if zero_noise {
            return Ok(mean);
        }
        let z = Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        Ok(mean + &cov.cond_cov(s2).sqrt_apply(&z))
    };
    for i in 0..k_steps - 1 {
        let s_cur = schedule.sigmas[i];
        let s_next = schedule.sigmas[i + 1];
        let x0 = draw_x0(&x, s_cur, rng, opts.zero_noise)?;
        let ratio = (s_next * s_next) / (s_cur * s_cur);
        let bridge_std = s_next * (1.0 - ratio).sqrt();
        for j in 0..n {
            x[j] = x0[j] + ratio * (x[j] - x0[j]);
            if !opts.zero_noise {
                x[j] += bridge_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        ensure_finite(&x, "exact", &format!("ancestral step {i}"))?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(x.clone());
        }
    }
    let out = draw_x0(&x, schedule.sigma_min, rng, opts.zero_noise)?;
    ensure_finite(&out, "exact", "terminal draw")?;
    if let Some(t) = trace {
        t.push(out.clone());
    }
    Ok(out)
}

/// One guided (or unconditional) chain; deterministic per seed.
pub fn ancestral_sample(
    engine: &GuidanceEngine<'_>,
    schedule: &NoiseSchedule,
    rng_seed: u64,
    opts: &SamplerOptions,
) -> Result<Array1<f64>> {
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    run_chain(engine, schedule, &mut rng, opts, None)
}

/// Like [`ancestral_sample`] but returns the state after every step
/// (final entry is the denoised output).
pub fn ancestral_trajectory(
    engine: &GuidanceEngine<'_>,
    schedule: &NoiseSchedule,
    rng_seed: u64,
    opts: &SamplerOptions,
) -> Result<Vec<Array1<f64>>> {
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    let mut trace = Vec::with_capacity(schedule.sigmas.len());
    run_chain(engine, schedule, &mut rng, opts, Some(&mut trace))?;
    Ok(trace)
}

/// Outcome of a chain batch: successful samples in chain order plus the
/// number of dropped (failed) chains.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub samples: Vec<Array1<f64>>,
    pub failures: usize,
    pub total: usize,
}

/// Fraction of failed chains above which the whole batch errors out.
pub const BATCH_FAILURE_THRESHOLD: f64 = 0.01;

/// `n` independent chains with per-chain RNG streams derived from one
/// master seed; result identical regardless of worker count.
pub fn batch_sample(
    engine: &GuidanceEngine<'_>,
    schedule: &NoiseSchedule,
    n: usize,
    master_seed: u64,
    opts: &SamplerOptions,
) -> Result<BatchResult> {
    if n == 0 {
        return Err(invalid("batch size must be >= 1"));
    }
    let results: Vec<Result<Array1<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
            rng.set_stream(i as u64 + 1);
            run_chain(engine, schedule, &mut rng, opts, None)
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_err()).count();
    if failures as f64 > BATCH_FAILURE_THRESHOLD * n as f64 {
        return Err(Error::BatchFailure { failed: failures, total: n });
    }
    Ok(BatchResult {
        samples: results.into_iter().filter_map(|r| r.ok()).collect(),
        failures,
        total: n,
    })
}
