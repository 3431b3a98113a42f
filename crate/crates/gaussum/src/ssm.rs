//! Linear state-space models with Gaussian-mixture noises.
//!
//! The model is
//!
//! ```text
//! x_n = F x_{n-1} + G v_n        v_n ~ Σᵢ αᵢ N(μ_vᵢ, Qᵢ)
//! y_n = H x_n + w_n              w_n ~ Σⱼ βⱼ N(μ_wⱼ, Rⱼ)
//! ```
//!
//! Prediction and filtering run a bank of Kalman updates, one per
//! (noise component, state component) combination, so the posterior order
//! multiplies by the noise orders at every step; [`run_filter`] caps it
//! with the greedy reducer after each measurement update.
//!
//! Fixed-interval smoothing is done with a two-filter construction: a
//! backward pass accumulates the likelihood of the future observations in
//! information form (which tolerates flat directions), and each smoothed
//! marginal is the normalized product of the forward predicted mixture
//! with the backward likelihood. In the single-Gaussian case this
//! reproduces the Rauch-Tung-Striebel smoother.

use std::fs;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::criteria::CriterionKind;
use crate::error::{Error, Result};
use crate::gaussmix::{symmetrize, GaussianComponent, GaussianMixture, LOG_2PI};
use crate::reduce::reduce_to;
use crate::util::{log_sum_exp, CompensatedSum};

/// Combination products lighter than this fraction of the total mass are
/// dropped before reduction; they are far below every smoothing tolerance
/// and keeping them makes the smoother quadratic in the cap.
const COMBINE_PRUNE_REL: f64 = 1e-10;

/// Weight floor for renormalized mixture components, so that components
/// whose posterior probability underflows stay representable.
const WEIGHT_FLOOR: f64 = 1e-300;

/// Backward passes that cannot be reduced (rank-deficient observation
/// matrix) may grow; beyond this order the smoother gives up.
const BACKWARD_ORDER_LIMIT: usize = 65_536;

/// Time-invariant linear model with Gaussian-mixture system and
/// observation noises.
#[derive(Clone, Debug)]
pub struct LinearStateSpaceModel {
    transition: DMatrix<f64>,
    noise_input: DMatrix<f64>,
    observation: DMatrix<f64>,
    sys_noise: GaussianMixture,
    obs_noise: GaussianMixture,
}

impl LinearStateSpaceModel {
    pub fn new(
        transition: DMatrix<f64>,
        noise_input: DMatrix<f64>,
        observation: DMatrix<f64>,
        sys_noise: GaussianMixture,
        obs_noise: GaussianMixture,
    ) -> Result<Self> {
        let dx = transition.nrows();
        if transition.ncols() != dx || dx == 0 {
            return Err(Error::Argument("transition matrix must be square and nonempty".into()));
        }
        if noise_input.nrows() != dx {
            return Err(Error::Argument(format!(
                "noise input matrix has {} rows, expected {dx}",
                noise_input.nrows()
            )));
        }
        if noise_input.ncols() != sys_noise.dim() {
            return Err(Error::Argument(format!(
                "noise input matrix has {} columns, system noise has dimension {}",
                noise_input.ncols(),
                sys_noise.dim()
            )));
        }
        if observation.ncols() != dx {
            return Err(Error::Argument(format!(
                "observation matrix has {} columns, expected {dx}",
                observation.ncols()
            )));
        }
        if observation.nrows() != obs_noise.dim() {
            return Err(Error::Argument(format!(
                "observation matrix has {} rows, observation noise has dimension {}",
                observation.nrows(),
                obs_noise.dim()
            )));
        }
        Ok(Self {
            transition,
            noise_input,
            observation,
            sys_noise: sys_noise.normalize()?,
            obs_noise: obs_noise.normalize()?,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.observation.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn noise_input(&self) -> &DMatrix<f64> {
        &self.noise_input
    }

    pub fn observation(&self) -> &DMatrix<f64> {
        &self.observation
    }

    pub fn sys_noise(&self) -> &GaussianMixture {
        &self.sys_noise
    }

    pub fn obs_noise(&self) -> &GaussianMixture {
        &self.obs_noise
    }
}

/// Random-walk trend model: scalar state and observation with
/// F = G = H = [1], system noise α·N(0, τ²) + (1−α)·N(0, ξ²) and Gaussian
/// observation noise N(0, σ²).
pub fn trend_model(tau2: f64, xi2: f64, alpha: f64, sigma2: f64) -> Result<LinearStateSpaceModel> {
    for (name, v) in [("tau2", tau2), ("xi2", xi2), ("sigma2", sigma2)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Argument(format!("{name} must be positive, got {v}")));
        }
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha must lie strictly in (0, 1), got {alpha}")));
    }
    let one = DMatrix::from_element(1, 1, 1.0);
    let sys = GaussianMixture::new(vec![
        GaussianComponent::new_1d(alpha, 0.0, tau2)?,
        GaussianComponent::new_1d(1.0 - alpha, 0.0, xi2)?,
    ])?;
    let obs = GaussianMixture::new(vec![GaussianComponent::new_1d(1.0, 0.0, sigma2)?])?;
    LinearStateSpaceModel::new(one.clone(), one.clone(), one, sys, obs)
}

/// Diffuse but proper default prior: a single zero-mean Gaussian with
/// covariance 10⁴·I.
pub fn default_prior(state_dim: usize) -> GaussianMixture {
    let comp = GaussianComponent::new(
        1.0,
        DVector::zeros(state_dim),
        DMatrix::identity(state_dim, state_dim) * 1.0e4,
    )
    .expect("diffuse prior is a valid component");
    GaussianMixture::new(vec![comp]).expect("single component mixture is valid")
}

/// Stored result of a filter (and optionally smoother) run.
#[derive(Clone, Debug)]
pub struct FilterRun {
    /// p(x_n | Y_{n-1}) per step, after optional prediction-stage capping.
    pub predicted: Vec<GaussianMixture>,
    /// p(x_n | Y_n) per step, capped to `cap_m` components.
    pub filtered: Vec<GaussianMixture>,
    /// p(x_n | Y_N) per step once the smoother has run.
    pub smoothed: Option<Vec<GaussianMixture>>,
    /// Total log-likelihood Σ log p(y_n | Y_{n-1}).
    pub log_likelihood: f64,
    pub cap_m: usize,
    pub criterion: CriterionKind,
    /// Observations the run was produced from; kept so the smoother can
    /// run its backward pass without re-supplying the data.
    pub observations: Vec<DVector<f64>>,
}

/// One-step-ahead prediction: every (system-noise component i, posterior
/// component k) pair contributes weight αᵢγₖ, mean F·xₖ + G·μᵢ and
/// covariance F·Vₖ·Fᵀ + G·Qᵢ·Gᵀ.
pub fn predict_step(
    posterior: &GaussianMixture,
    model: &LinearStateSpaceModel,
) -> Result<GaussianMixture> {
    if posterior.dim() != model.state_dim() {
        return Err(Error::Argument(format!(
            "posterior has dimension {}, model state has dimension {}",
            posterior.dim(),
            model.state_dim()
        )));
    }
    let f = &model.transition;
    let g = &model.noise_input;
    let mut comps = Vec::with_capacity(model.sys_noise.order() * posterior.order());
    for ni in model.sys_noise.components() {
        let noise_cov = symmetrize(&(g * ni.cov() * g.transpose()));
        let noise_mean = g * ni.mean();
        for pc in posterior.components() {
            let mean = f * pc.mean() + &noise_mean;
            let cov = symmetrize(&(f * pc.cov() * f.transpose() + &noise_cov));
            comps.push(GaussianComponent::new(ni.weight() * pc.weight(), mean, cov)?);
        }
    }
    GaussianMixture::new(comps)
}

/// Measurement update: every (observation-noise component j, predicted
/// component k) pair goes through a Kalman update in Joseph form with
/// innovation e = y − H·xₖ − μⱼ and innovation covariance
/// S = H·Vₖ·Hᵀ + Rⱼ. Returns the normalized posterior and the step
/// log-likelihood log Σ βⱼδₖ·φ(e | 0, S).
pub fn filter_step(
    predicted: &GaussianMixture,
    y: &DVector<f64>,
    model: &LinearStateSpaceModel,
) -> Result<(GaussianMixture, f64)> {
    if predicted.dim() != model.state_dim() {
        return Err(Error::Argument(format!(
            "predicted mixture has dimension {}, model state has dimension {}",
            predicted.dim(),
            model.state_dim()
        )));
    }
    if y.len() != model.obs_dim() {
        return Err(Error::Argument(format!(
            "observation has dimension {}, model observation has dimension {}",
            y.len(),
            model.obs_dim()
        )));
    }
    let h = &model.observation;
    let dy = model.obs_dim();
    let dx = model.state_dim();
    let eye = DMatrix::<f64>::identity(dx, dx);

    let n_out = model.obs_noise.order() * predicted.order();
    let mut log_ws = Vec::with_capacity(n_out);
    let mut parts = Vec::with_capacity(n_out);
    for oc in model.obs_noise.components() {
        for pc in predicted.components() {
            let innov_cov = symmetrize(&(h * pc.cov() * h.transpose() + oc.cov()));
            let chol_s = Cholesky::new(innov_cov).ok_or_else(|| {
                Error::Numeric("innovation covariance is not positive definite".into())
            })?;
            let e = y - h * pc.mean() - oc.mean();
            // Gain K = V Hᵀ S⁻¹, realized as a Cholesky solve.
            let k = chol_s.solve(&(h * pc.cov())).transpose();
            let mean = pc.mean() + &k * &e;
            let a = &eye - &k * h;
            let cov = symmetrize(
                &(&a * pc.cov() * a.transpose() + &k * oc.cov() * k.transpose()),
            );
            let log_det_s =
                2.0 * chol_s.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let maha = e.dot(&chol_s.solve(&e));
            let log_phi = -0.5 * (dy as f64 * LOG_2PI + log_det_s + maha);
            log_ws.push(oc.weight().ln() + pc.weight().ln() + log_phi);
            parts.push((mean, cov));
        }
    }
    let step_log_lik = log_sum_exp(&log_ws);
    if !step_log_lik.is_finite() {
        return Err(Error::Numeric(
            "all filter weights underflowed; observation is implausible under the model".into(),
        ));
    }
    let comps = log_ws
        .iter()
        .zip(parts)
        .map(|(lw, (mean, cov))| {
            GaussianComponent::new((lw - step_log_lik).exp().max(WEIGHT_FLOOR), mean, cov)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((GaussianMixture::new(comps)?, step_log_lik))
}

/// Options for [`run_filter_with`].
#[derive(Clone, Debug)]
pub struct FilterConfig {
    pub cap_m: usize,
    pub criterion: CriterionKind,
    /// Also cap the predicted mixture before the measurement update; by
    /// default only the filtered mixture is capped.
    pub cap_after_predict: bool,
}

/// Run the Gaussian-sum filter over `ys`, capping the posterior order at
/// `cap_m` with the greedy reducer after every measurement update. `prior`
/// is the time-zero state distribution.
pub fn run_filter(
    model: &LinearStateSpaceModel,
    ys: &[DVector<f64>],
    prior: &GaussianMixture,
    cap_m: usize,
    criterion: CriterionKind,
) -> Result<FilterRun> {
    run_filter_with(model, ys, prior, &FilterConfig { cap_m, criterion, cap_after_predict: false })
}

pub fn run_filter_with(
    model: &LinearStateSpaceModel,
    ys: &[DVector<f64>],
    prior: &GaussianMixture,
    cfg: &FilterConfig,
) -> Result<FilterRun> {
    if cfg.cap_m < 1 {
        return Err(Error::Argument("component cap must be at least 1".into()));
    }
    if ys.is_empty() {
        return Err(Error::Argument("observation series is empty".into()));
    }
    let mut posterior = prior.normalize()?;
    if posterior.dim() != model.state_dim() {
        return Err(Error::Argument(format!(
            "prior has dimension {}, model state has dimension {}",
            posterior.dim(),
            model.state_dim()
        )));
    }
    let mut predicted = Vec::with_capacity(ys.len());
    let mut filtered = Vec::with_capacity(ys.len());
    let mut log_lik = CompensatedSum::default();
    for (n, y) in ys.iter().enumerate() {
        let step = |e: Error| at_step(e, n);
        let mut pred = predict_step(&posterior, model).map_err(step)?;
        if cfg.cap_after_predict && pred.order() > cfg.cap_m {
            pred = reduce_capped(&pred, cfg.cap_m, cfg.criterion).map_err(step)?;
        }
        let (mut filt, step_ll) = filter_step(&pred, y, model).map_err(step)?;
        if filt.order() > cfg.cap_m {
            filt = reduce_capped(&filt, cfg.cap_m, cfg.criterion).map_err(step)?;
        }
        log_lik.add(step_ll);
        predicted.push(pred);
        filtered.push(filt.clone());
        posterior = filt;
    }
    Ok(FilterRun {
        predicted,
        filtered,
        smoothed: None,
        log_likelihood: log_lik.total(),
        cap_m: cfg.cap_m,
        criterion: cfg.criterion,
        observations: ys.to_vec(),
    })
}

fn at_step(e: Error, n: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("step {n}: {msg}")),
        other => other,
    }
}

/// Cap a posterior with the greedy reducer. The Pearson criterion can
/// exclude every remaining pair (its safe-guard against unbounded ratios),
/// but a filter must still cap its posterior; a stuck reduction continues
/// from where it stopped under the always-finite log-determinant bound.
fn reduce_capped(
    m: &GaussianMixture,
    cap_m: usize,
    criterion: CriterionKind,
) -> Result<GaussianMixture> {
    match reduce_to(m, cap_m, criterion, false) {
        Ok(trace) => Ok(trace.final_mixture),
        Err(Error::ReductionStuck { partial, .. }) => {
            let resume = partial.map(|t| t.final_mixture).unwrap_or_else(|| m.clone());
            Ok(reduce_to(&resume, cap_m, CriterionKind::RunnallsBound, false)?.final_mixture)
        }
        Err(e) => Err(e),
    }
}

/// One term of the backward likelihood, kept in information form
/// exp(−½ xᵀΛx + θᵀx + c) so that flat directions (Λ singular) are
/// representable.
#[derive(Clone, Debug)]
struct InfoGaussian {
    lambda: DMatrix<f64>,
    theta: DVector<f64>,
    log_c: f64,
}

/// Fixed-interval smoothing of a stored filter run by the two-filter
/// construction described in the module docs. The smoothed mixture at the
/// last step equals the filtered one; every other step combines the stored
/// predicted mixture with the backward likelihood of the observations from
/// that step on, then reduces to the run's cap.
pub fn run_smoother(run: &FilterRun, model: &LinearStateSpaceModel) -> Result<FilterRun> {
    let n_steps = run.filtered.len();
    if n_steps == 0 || run.predicted.len() != n_steps || run.observations.len() != n_steps {
        return Err(Error::Argument(
            "filter run must store predicted/filtered mixtures and observations".into(),
        ));
    }
    let mut smoothed = vec![run.filtered[n_steps - 1].clone(); n_steps];
    if n_steps > 1 {
        // Backward likelihood of y_{N} given x_N, then recurse down.
        let unit = vec![InfoGaussian {
            lambda: DMatrix::zeros(model.state_dim(), model.state_dim()),
            theta: DVector::zeros(model.state_dim()),
            log_c: 0.0,
        }];
        let mut backward =
            backward_measurement(&unit, &run.observations[n_steps - 1], model)
                .map_err(|e| at_step(e, n_steps - 1))?;
        backward = reduce_backward(backward, run.cap_m, run.criterion)?;
        for t in (0..n_steps - 1).rev() {
            let step = |e: Error| at_step(e, t);
            backward = backward_propagate(&backward, model).map_err(step)?;
            backward = backward_measurement(&backward, &run.observations[t], model)
                .map_err(step)?;
            backward = reduce_backward(backward, run.cap_m, run.criterion).map_err(step)?;
            smoothed[t] = combine_forward_backward(
                &run.predicted[t],
                &backward,
                run.cap_m,
                run.criterion,
            )
            .map_err(step)?;
        }
    }
    Ok(FilterRun { smoothed: Some(smoothed), ..run.clone() })
}

/// Multiply each backward term by the observation likelihood
/// p(y | x) = Σⱼ βⱼ φ(y − Hx − μⱼ | 0, Rⱼ), expanding the order by the
/// observation-noise order.
fn backward_measurement(
    backward: &[InfoGaussian],
    y: &DVector<f64>,
    model: &LinearStateSpaceModel,
) -> Result<Vec<InfoGaussian>> {
    let h = &model.observation;
    let dy = model.obs_dim();
    if y.len() != dy {
        return Err(Error::Argument(format!(
            "observation has dimension {}, model observation has dimension {dy}",
            y.len()
        )));
    }
    let mut out = Vec::with_capacity(backward.len() * model.obs_noise.order());
    for oc in model.obs_noise.components() {
        let e = y - oc.mean();
        let rinv_h = oc.solve_cov_mat(h);
        let lambda_obs = symmetrize(&(h.transpose() * &rinv_h));
        let theta_obs = rinv_h.transpose() * &e;
        let log_norm = oc.weight().ln()
            - 0.5 * (dy as f64 * LOG_2PI + oc.log_det_cov() + e.dot(&oc.solve_cov(&e)));
        for b in backward {
            out.push(InfoGaussian {
                lambda: symmetrize(&(&b.lambda + &lambda_obs)),
                theta: &b.theta + &theta_obs,
                log_c: b.log_c + log_norm,
            });
        }
    }
    Ok(out)
}

/// Push the backward likelihood through the dynamics: from terms in
/// x_{t+1} to terms in x_t by integrating against the transition density,
/// expanding the order by the system-noise order. Works for any G·Q·Gᵀ
/// (including singular) through the noise square root L = G·chol(Q).
fn backward_propagate(
    backward: &[InfoGaussian],
    model: &LinearStateSpaceModel,
) -> Result<Vec<InfoGaussian>> {
    let f = &model.transition;
    let g = &model.noise_input;
    let dv = model.sys_noise.dim();
    let mut out = Vec::with_capacity(backward.len() * model.sys_noise.order());
    for ni in model.sys_noise.components() {
        let chol_q = Cholesky::new(ni.cov().clone())
            .ok_or_else(|| Error::Numeric("system noise covariance is not PD".into()))?;
        let l = g * chol_q.l();
        let b_shift = g * ni.mean();
        let log_w = ni.weight().ln();
        for comp in backward {
            let lam_l = &comp.lambda * &l;
            let m_mat = symmetrize(&(DMatrix::identity(dv, dv) + l.transpose() * &lam_l));
            let chol_m = Cholesky::new(m_mat).ok_or_else(|| {
                Error::Numeric("backward propagation matrix is not PD".into())
            })?;
            let log_det_m =
                2.0 * chol_m.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let lt_theta = l.transpose() * &comp.theta;
            // Residual quadratic after integrating out the noise.
            let lambda_mid = symmetrize(
                &(&comp.lambda - &lam_l * chol_m.solve(&lam_l.transpose())),
            );
            let theta_mid = &comp.theta - &lam_l * chol_m.solve(&lt_theta);
            let mut log_c = comp.log_c + 0.5 * lt_theta.dot(&chol_m.solve(&lt_theta))
                - 0.5 * log_det_m
                + log_w;
            // Substitute the mean map m = F x + G μ.
            log_c += -0.5 * b_shift.dot(&(&lambda_mid * &b_shift)) + theta_mid.dot(&b_shift);
            let lambda_x = symmetrize(&(f.transpose() * &lambda_mid * f));
            let theta_x = f.transpose() * (&theta_mid - &lambda_mid * &b_shift);
            out.push(InfoGaussian { lambda: lambda_x, theta: theta_x, log_c });
        }
    }
    Ok(out)
}

/// Cap the backward likelihood with the greedy reducer when every term has
/// a positive-definite information matrix (then the pass is, up to scale, a
/// Gaussian mixture). Terms with flat directions are carried unreduced.
fn reduce_backward(
    backward: Vec<InfoGaussian>,
    cap_m: usize,
    criterion: CriterionKind,
) -> Result<Vec<InfoGaussian>> {
    if backward.len() <= cap_m {
        return Ok(backward);
    }
    let mut gaussians = Vec::with_capacity(backward.len());
    for comp in &backward {
        match Cholesky::new(comp.lambda.clone()) {
            Some(chol) => {
                let mean = chol.solve(&comp.theta);
                let cov = symmetrize(&chol.inverse());
                let d = comp.theta.len() as f64;
                let log_det_lambda =
                    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                let log_mass =
                    comp.log_c + 0.5 * (d * LOG_2PI - log_det_lambda + comp.theta.dot(&mean));
                gaussians.push((log_mass, mean, cov));
            }
            None => {
                if backward.len() > BACKWARD_ORDER_LIMIT {
                    return Err(Error::Numeric(
                        "backward pass is not reducible and grew past its order limit".into(),
                    ));
                }
                return Ok(backward);
            }
        }
    }
    let total = log_sum_exp(&gaussians.iter().map(|(lm, _, _)| *lm).collect::<Vec<_>>());
    if !total.is_finite() {
        return Err(Error::Numeric("backward likelihood mass underflowed".into()));
    }
    let comps = gaussians
        .into_iter()
        .map(|(lm, mean, cov)| {
            GaussianComponent::new((lm - total).exp().max(WEIGHT_FLOOR), mean, cov)
        })
        .collect::<Result<Vec<_>>>()?;
    let mixture = GaussianMixture::new(comps)?;
    let reduced = reduce_capped(&mixture, cap_m, criterion)?;
    // Scale is irrelevant downstream: products are renormalized and the
    // next propagation is linear in the total mass.
    Ok(reduced
        .components()
        .iter()
        .map(|c| {
            let lambda = c.precision();
            let theta = c.solve_cov(c.mean());
            let d = c.dim() as f64;
            let log_c = c.weight().ln()
                - 0.5 * (d * LOG_2PI + c.log_det_cov() + c.mean().dot(&theta));
            InfoGaussian { lambda, theta, log_c }
        })
        .collect())
}

/// Normalized product of the forward predicted mixture with the backward
/// likelihood; each componentwise Gaussian product contributes its
/// normalization constant as an unnormalized weight.
fn combine_forward_backward(
    predicted: &GaussianMixture,
    backward: &[InfoGaussian],
    cap_m: usize,
    criterion: CriterionKind,
) -> Result<GaussianMixture> {
    let mut log_ws = Vec::with_capacity(predicted.order() * backward.len());
    let mut parts = Vec::with_capacity(log_ws.capacity());
    for pc in predicted.components() {
        let prec_p = pc.precision();
        let prec_mean = pc.solve_cov(pc.mean());
        let m_quad = pc.mean().dot(&prec_mean);
        for bc in backward {
            let lambda_post = symmetrize(&(&prec_p + &bc.lambda));
            let chol = Cholesky::new(lambda_post).ok_or_else(|| {
                Error::Numeric("combined smoothing precision is not positive definite".into())
            })?;
            let b = &prec_mean + &bc.theta;
            let mean = chol.solve(&b);
            let cov = symmetrize(&chol.inverse());
            let log_det_post =
                2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let log_w = pc.weight().ln() + bc.log_c
                - 0.5 * pc.log_det_cov()
                - 0.5 * log_det_post
                + 0.5 * b.dot(&mean)
                - 0.5 * m_quad;
            log_ws.push(log_w);
            parts.push((mean, cov));
        }
    }
    let total = log_sum_exp(&log_ws);
    if !total.is_finite() {
        return Err(Error::Numeric("smoothing combination mass underflowed".into()));
    }
    let mut comps = Vec::with_capacity(parts.len());
    for (lw, (mean, cov)) in log_ws.iter().zip(parts) {
        let w = (lw - total).exp();
        if w >= COMBINE_PRUNE_REL {
            comps.push(GaussianComponent::new(w, mean, cov)?);
        }
    }
    if comps.is_empty() {
        return Err(Error::Numeric("every smoothing product pruned away".into()));
    }
    let mixture = GaussianMixture::new(comps)?.normalize()?;
    if mixture.order() > cap_m {
        reduce_capped(&mixture, cap_m, criterion)
    } else {
        Ok(mixture)
    }
}

// --- JSON / CSV formats ------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ModelJson {
    f: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    sys_noise: crate::gaussmix::MixtureJson,
    obs_noise: crate::gaussmix::MixtureJson,
}

fn matrix_from_rows(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    if r == 0 {
        return Err(Error::Argument(format!("matrix {name} has no rows")));
    }
    let c = rows[0].len();
    if c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Argument(format!("matrix {name} has ragged or empty rows")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl LinearStateSpaceModel {
    pub fn from_json(s: &str) -> Result<Self> {
        let raw: ModelJson = serde_json::from_str(s)?;
        LinearStateSpaceModel::new(
            matrix_from_rows(&raw.f, "F")?,
            matrix_from_rows(&raw.g, "G")?,
            matrix_from_rows(&raw.h, "H")?,
            raw.sys_noise.into_mixture()?,
            raw.obs_noise.into_mixture()?,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelJson {
            f: matrix_to_rows(&self.transition),
            g: matrix_to_rows(&self.noise_input),
            h: matrix_to_rows(&self.observation),
            sys_noise: crate::gaussmix::MixtureJson::from_mixture(&self.sys_noise),
            obs_noise: crate::gaussmix::MixtureJson::from_mixture(&self.obs_noise),
        })
        .expect("model serialization cannot fail")
    }
}

pub fn read_model(path: &Path) -> Result<LinearStateSpaceModel> {
    LinearStateSpaceModel::from_json(&fs::read_to_string(path)?)
}

pub fn write_model(path: &Path, model: &LinearStateSpaceModel) -> Result<()> {
    fs::write(path, model.to_json() + "\n")?;
    Ok(())
}

/// Parse an observation series: one comma-separated vector per line, with
/// an optional header line (skipped when its fields do not parse as
/// numbers). Blank lines are ignored.
pub fn series_from_str(s: &str) -> Result<Vec<DVector<f64>>> {
    let mut rows = Vec::new();
    for (idx, line) in s.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(vals) => rows.push(DVector::from_vec(vals)),
            Err(_) if rows.is_empty() && idx == 0 => continue, // header
            Err(e) => {
                return Err(Error::Argument(format!(
                    "series line {}: cannot parse observation: {e}",
                    idx + 1
                )));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Argument("series contains no observations".into()));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Argument("series rows have inconsistent dimensions".into()));
    }
    Ok(rows)
}

pub fn read_series(path: &Path) -> Result<Vec<DVector<f64>>> {
    series_from_str(&fs::read_to_string(path)?)
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RunJson {
    cap_m: usize,
    criterion: CriterionKind,
    log_likelihood: f64,
    predicted: Vec<crate::gaussmix::MixtureJson>,
    filtered: Vec<crate::gaussmix::MixtureJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    smoothed: Option<Vec<crate::gaussmix::MixtureJson>>,
    observations: Vec<Vec<f64>>,
}

impl FilterRun {
    pub fn to_json(&self) -> String {
        let raw = RunJson {
            cap_m: self.cap_m,
            criterion: self.criterion,
            log_likelihood: self.log_likelihood,
            predicted: self
                .predicted
                .iter()
                .map(crate::gaussmix::MixtureJson::from_mixture)
                .collect(),
            filtered: self
                .filtered
                .iter()
                .map(crate::gaussmix::MixtureJson::from_mixture)
                .collect(),
            smoothed: self.smoothed.as_ref().map(|s| {
                s.iter().map(crate::gaussmix::MixtureJson::from_mixture).collect()
            }),
            observations: self
                .observations
                .iter()
                .map(|y| y.iter().cloned().collect())
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("run serialization cannot fail")
    }
}

pub fn write_run(path: &Path, run: &FilterRun) -> Result<()> {
    fs::write(path, run.to_json() + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::SplitMix64;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn gaussian_mixture_1(mean: f64, var: f64) -> GaussianMixture {
        GaussianMixture::new(vec![GaussianComponent::new_1d(1.0, mean, var).unwrap()]).unwrap()
    }

    #[test]
    fn trend_model_matches_requested_parameters() {
        let m = trend_model(0.000254, 1.189, 0.989, 1.027).unwrap();
        assert_eq!(m.state_dim(), 1);
        assert_eq!(m.obs_dim(), 1);
        let sys = m.sys_noise();
        assert_relative_eq!(sys.component(0).weight(), 0.989, max_relative = 1e-12);
        assert_relative_eq!(sys.component(1).weight(), 0.011, max_relative = 1e-9);
        let (_, cov) = sys.mixture_moments();
        assert_relative_eq!(
            cov[(0, 0)],
            0.989 * 0.000254 + 0.011 * 1.189,
            max_relative = 1e-9
        );
    }

    #[test]
    fn trend_model_rejects_degenerate_parameters() {
        assert!(trend_model(0.0, 1.0, 0.5, 1.0).is_err());
        assert!(trend_model(0.1, 1.0, 1.0, 1.0).is_err());
        assert!(trend_model(0.1, 1.0, 0.0, 1.0).is_err());
        assert!(trend_model(0.1, -1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn identity_propagation_keeps_posterior() {
        // q = 1 with zero noise covariance is not representable (PD
        // required), so use a vanishing one and identity dynamics.
        let one = DMatrix::from_element(1, 1, 1.0);
        let sys = gaussian_mixture_1(0.0, 1e-300);
        let obs = gaussian_mixture_1(0.0, 1.0);
        let model = LinearStateSpaceModel::new(one.clone(), one.clone(), one, sys, obs).unwrap();
        let post = gaussian_mixture_1(2.0, 3.0);
        let pred = predict_step(&post, &model).unwrap();
        assert_eq!(pred.order(), 1);
        assert_relative_eq!(pred.component(0).mean()[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(pred.component(0).cov()[(0, 0)], 3.0, max_relative = 1e-12);
    }

    #[test]
    fn trend_prediction_spreads_by_both_noise_variances() {
        let model = trend_model(0.01, 2.0, 0.7, 1.0).unwrap();
        let post = gaussian_mixture_1(1.0, 0.5);
        let pred = predict_step(&post, &model).unwrap();
        assert_eq!(pred.order(), 2);
        assert_relative_eq!(pred.component(0).cov()[(0, 0)], 0.51, max_relative = 1e-12);
        assert_relative_eq!(pred.component(1).cov()[(0, 0)], 2.5, max_relative = 1e-12);
        assert!((pred.weight_sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn degenerate_filter_step_is_a_kalman_update() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let model = LinearStateSpaceModel::new(
            one.clone(),
            one.clone(),
            one,
            gaussian_mixture_1(0.0, 0.3),
            gaussian_mixture_1(0.0, 0.8),
        )
        .unwrap();
        let pred = gaussian_mixture_1(1.0, 2.0);
        let y = dvector![2.5];
        let (post, ll) = filter_step(&pred, &y, &model).unwrap();
        // Hand Kalman update: S = 2.8, K = 2/2.8, mean = 1 + K·1.5.
        let k = 2.0 / 2.8;
        assert_relative_eq!(post.component(0).mean()[0], 1.0 + k * 1.5, max_relative = 1e-12);
        assert_relative_eq!(post.component(0).cov()[(0, 0)], (1.0 - k) * 2.0, max_relative = 1e-10);
        let expect_ll = -0.5 * ((2.8 * std::f64::consts::TAU).ln() + 1.5 * 1.5 / 2.8);
        assert_relative_eq!(ll, expect_ll, max_relative = 1e-12);
    }

    #[test]
    fn filter_posterior_weights_sum_to_one() {
        let model = trend_model(0.02, 1.5, 0.9, 1.0).unwrap();
        let pred = predict_step(&gaussian_mixture_1(0.0, 1.0), &model).unwrap();
        let (post, ll) = filter_step(&pred, &dvector![0.7], &model).unwrap();
        assert_eq!(post.order(), 2);
        assert!((post.weight_sum() - 1.0).abs() <= 1e-12);
        assert!(ll.is_finite());
    }

    #[test]
    fn run_filter_caps_order_and_smoother_fills_all_steps() {
        let model = trend_model(0.01, 1.0, 0.95, 1.0).unwrap();
        let mut rng = SplitMix64::new(9);
        let ys: Vec<DVector<f64>> =
            (0..40).map(|_| dvector![rng.next_normal()]).collect();
        let run = run_filter(&model, &ys, &default_prior(1), 3, CriterionKind::PearsonChi2)
            .unwrap();
        assert_eq!(run.filtered.len(), 40);
        assert!(run.filtered.iter().all(|m| m.order() <= 3));
        assert!(run.filtered.iter().all(|m| (m.weight_sum() - 1.0).abs() <= 1e-9));
        assert!(run.log_likelihood.is_finite());

        let smoothed = run_smoother(&run, &model).unwrap();
        let sm = smoothed.smoothed.as_ref().unwrap();
        assert_eq!(sm.len(), 40);
        assert!(sm.iter().all(|m| m.order() <= 3));
        // Boundary: last smoothed equals last filtered exactly.
        let last_f = run.filtered.last().unwrap();
        let last_s = sm.last().unwrap();
        for (a, b) in last_f.components().iter().zip(last_s.components()) {
            assert_eq!(a.weight(), b.weight());
            assert_eq!(a.mean(), b.mean());
        }
    }

    #[test]
    fn mixture_system_noise_differs_from_moment_matched_kalman() {
        let model = trend_model(0.000254, 1.189, 0.989, 1.027).unwrap();
        let var = 0.989 * 0.000254 + 0.011 * 1.189;
        let kalman_model = {
            let one = DMatrix::from_element(1, 1, 1.0);
            LinearStateSpaceModel::new(
                one.clone(),
                one.clone(),
                one,
                gaussian_mixture_1(0.0, var),
                gaussian_mixture_1(0.0, 1.027),
            )
            .unwrap()
        };
        let mut rng = SplitMix64::new(4);
        let mut level = 0.0;
        let ys: Vec<DVector<f64>> = (0..60)
            .map(|t| {
                if t == 30 {
                    level = 4.0;
                }
                dvector![level + rng.next_normal()]
            })
            .collect();
        let prior = default_prior(1);
        let gsf = run_filter(&model, &ys, &prior, 1, CriterionKind::PearsonChi2).unwrap();
        let kf = run_filter(&kalman_model, &ys, &prior, 1, CriterionKind::PearsonChi2).unwrap();
        let max_gap = gsf
            .filtered
            .iter()
            .zip(&kf.filtered)
            .map(|(a, b)| (a.component(0).mean()[0] - b.component(0).mean()[0]).abs())
            .fold(0.0_f64, f64::max);
        assert!(max_gap > 1e-3, "collapsed Gaussian-sum filter never deviated ({max_gap})");
    }

    #[test]
    fn smoothed_trend_is_insensitive_to_the_cap() {
        // Caps 4 and 8 must tell the same story about the level shifts;
        // larger caps only sharpen the shift neighborhoods further (8 vs 16
        // agree to ~0.5% of the range, but cost grows quadratically in the
        // cap; see the trend_smoother example).
        let model = trend_model(0.000254, 1.189, 0.989, 1.027).unwrap();
        let ys: Vec<DVector<f64>> =
            crate::fixtures::level_shift_series(crate::fixtures::LEVEL_SHIFT_SEED)
                .into_iter()
                .map(|y| dvector![y])
                .collect();
        let prior = default_prior(1);
        let mut means = Vec::new();
        for cap in [4usize, 8] {
            let run = run_filter(&model, &ys, &prior, cap, CriterionKind::PearsonChi2).unwrap();
            let sm = run_smoother(&run, &model).unwrap();
            means.push(
                sm.smoothed
                    .unwrap()
                    .iter()
                    .map(|m| m.mixture_moments().0[0])
                    .collect::<Vec<f64>>(),
            );
        }
        let series_range = 4.0;
        let max_gap = means[0]
            .iter()
            .zip(&means[1])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(
            max_gap <= 0.03 * series_range,
            "smoothed means diverge across caps: {max_gap}"
        );
    }

    #[test]
    fn log_likelihood_invariant_under_noise_component_reordering() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let sys_a = GaussianMixture::new(vec![
            GaussianComponent::new_1d(0.7, 0.0, 0.2).unwrap(),
            GaussianComponent::new_1d(0.3, 0.0, 2.0).unwrap(),
        ])
        .unwrap();
        let sys_b = GaussianMixture::new(vec![
            GaussianComponent::new_1d(0.3, 0.0, 2.0).unwrap(),
            GaussianComponent::new_1d(0.7, 0.0, 0.2).unwrap(),
        ])
        .unwrap();
        let obs = gaussian_mixture_1(0.0, 1.0);
        let model_a =
            LinearStateSpaceModel::new(one.clone(), one.clone(), one.clone(), sys_a, obs.clone())
                .unwrap();
        let model_b =
            LinearStateSpaceModel::new(one.clone(), one.clone(), one, sys_b, obs).unwrap();
        let mut rng = SplitMix64::new(17);
        let ys: Vec<DVector<f64>> = (0..50).map(|_| dvector![rng.next_normal()]).collect();
        let prior = default_prior(1);
        let ra = run_filter(&model_a, &ys, &prior, 4, CriterionKind::RunnallsBound).unwrap();
        let rb = run_filter(&model_b, &ys, &prior, 4, CriterionKind::RunnallsBound).unwrap();
        assert!((ra.log_likelihood - rb.log_likelihood).abs() <= 1e-9);
    }

    #[test]
    fn covariances_stay_symmetric_and_pd_over_long_runs() {
        let model = trend_model(0.05, 1.2, 0.9, 0.8).unwrap();
        let mut rng = SplitMix64::new(23);
        let ys: Vec<DVector<f64>> = (0..1000).map(|_| dvector![rng.next_normal()]).collect();
        let run = run_filter(&model, &ys, &default_prior(1), 4, CriterionKind::PearsonChi2)
            .unwrap();
        for m in &run.filtered {
            for c in m.components() {
                let cov = c.cov();
                for i in 0..cov.nrows() {
                    for j in 0..cov.ncols() {
                        assert!((cov[(i, j)] - cov[(j, i)]).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn model_json_round_trip() {
        let model = trend_model(0.01, 1.0, 0.9, 1.3).unwrap();
        let s = model.to_json();
        let back = LinearStateSpaceModel::from_json(&s).unwrap();
        assert_eq!(back.state_dim(), 1);
        assert_eq!(back.sys_noise().order(), 2);
        assert_eq!(s, back.to_json());
    }

    #[test]
    fn series_parsing_handles_headers_and_errors() {
        let parsed = series_from_str("y\n1.0\n2.5\n-0.5\n").unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed[1][0], 2.5);
        let multi = series_from_str("1.0, 2.0\n3.0, 4.0\n").unwrap();
        assert_eq!(multi[1], dvector![3.0, 4.0]);
        assert!(series_from_str("").is_err());
        assert!(series_from_str("1.0\n1.0,2.0\n").is_err());
        assert!(series_from_str("y\n1.0\nbroken\n").is_err());
    }
}
