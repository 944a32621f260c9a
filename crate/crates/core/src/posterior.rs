//! Log-density kernels and closed-form conditionals.
//!
//! Both samplers target the posterior with the diagonal diffusion `Sigma`
//! integrated out. For each component `i` the Euler-Maruyama transition
//! densities and the `Inverse-Gamma(alpha, beta)` prior combine into
//!
//! ```text
//! integral over Sigma_i = Gamma(alpha + N/2) * (beta + dt/2 * S_i)^-(alpha + N/2)
//! S_i = sum_j ((X_{j+1} - X_j)/dt - f(t_j, X_j))_i^2
//! ```
//!
//! up to factors that do not depend on the path or the drift. The
//! `Gamma(alpha + N/2)^p` factor is dropped from every kernel here; only
//! ratios matter to Metropolis-Hastings.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::dictionary::{CoefficientMatrix, DictionaryBasis, InclusionMask};
use crate::dynamics::{DiffusionSpec, DriftModel, LatentPath, ObservationSet};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Hyperparameters of the spike-and-slab identification model.
///
/// The observation noise `R` travels with the [`ObservationSet`] and the
/// step size with the [`LatentPath`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SSHyperParams {
    pub tau0: f64,
    pub tau1: f64,
    /// Prior inclusion probability per entry of B, `p x p*`.
    pub q: Array2<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub mu0: Vec<f64>,
    pub lambda0_sq: Vec<f64>,
}

impl SSHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.tau1 >= self.tau0) {
            return Err(Error::invalid("spike-and-slab needs tau1 >= tau0 > 0"));
        }
        if self.q.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
            return Err(Error::invalid("prior inclusion probabilities must lie in (0, 1)"));
        }
        validate_common(self.alpha, self.beta, &self.mu0, &self.lambda0_sq)
    }

    /// `q_active` on the entries of `pattern`, `q_inactive` elsewhere.
    pub fn prior_inclusion(pattern: &InclusionMask, q_active: f64, q_inactive: f64) -> Array2<f64> {
        pattern.flags.mapv(|g| if g == 1 { q_active } else { q_inactive })
    }
}

/// Hyperparameters of the reduced inference model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfHyperParams {
    pub m0: Vec<f64>,
    pub s0_sq: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mu0: Vec<f64>,
    pub lambda0_sq: Vec<f64>,
}

impl InfHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s0_sq > 0.0) {
            return Err(Error::invalid("s0_sq must be positive"));
        }
        validate_common(self.alpha, self.beta, &self.mu0, &self.lambda0_sq)
    }
}

fn validate_common(alpha: f64, beta: f64, mu0: &[f64], lambda0_sq: &[f64]) -> Result<()> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::invalid("inverse-gamma alpha and beta must be positive"));
    }
    if mu0.len() != lambda0_sq.len() || lambda0_sq.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::invalid("X0 prior needs matching mu0 / positive lambda0_sq"));
    }
    Ok(())
}

fn finite(v: f64, term: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation { term })
    }
}

/// `sum_i log N(Y_i; X(t_i), R)` including the normalising constants.
pub fn log_observation_likelihood(x: &LatentPath, obs: &ObservationSet) -> Result<f64> {
    let idx = obs.grid_indices(x.t0, x.dt, x.n_steps())?;
    if obs.dimension() != x.dimension() {
        return Err(Error::invalid("observation and path dimensions differ"));
    }
    finite(observation_loglik_at(x, obs, &idx), "observation likelihood")
}

pub(crate) fn observation_loglik_at(x: &LatentPath, obs: &ObservationSet, idx: &[usize]) -> f64 {
    let p = obs.dimension();
    let log_det: f64 = obs.r_diag.iter().map(|r| r.ln()).sum();
    let mut quad = 0.0;
    for (row, &k) in idx.iter().enumerate() {
        for i in 0..p {
            let e = obs.values[[row, i]] - x.states[[k, i]];
            quad += e * e / obs.r_diag[i];
        }
    }
    -0.5 * (idx.len() as f64 * (p as f64 * LN_2PI + log_det) + quad)
}

/// `log N(X_0; mu0, diag(lambda0_sq))`.
pub fn log_initial_prior(x0: &[f64], mu0: &[f64], lambda0_sq: &[f64]) -> f64 {
    x0.iter()
        .zip(mu0)
        .zip(lambda0_sq)
        .map(|((x, m), l)| -0.5 * (LN_2PI + l.ln() + (x - m).powi(2) / l))
        .sum()
}

/// Drift of the dense dictionary model at every step `X_0 .. X_{N-1}`.
pub fn dictionary_drift_path(x: &LatentPath, b: &CoefficientMatrix) -> Result<Array2<f64>> {
    let basis = DictionaryBasis::new(x.dimension())?;
    if b.p() != basis.p() || b.p_star() != basis.p_star() {
        return Err(Error::invalid("coefficient matrix shape does not match the path"));
    }
    let n = x.n_steps();
    let mut feats = vec![0.0; basis.p_star()];
    let mut out = Array2::zeros((n, basis.p()));
    for j in 0..n {
        let state = x.states.row(j);
        basis.features_into(state.as_slice().expect("row-major path"), x.time(j), &mut feats);
        b.apply_into(&feats, out.row_mut(j).as_slice_mut().expect("row-major"));
    }
    Ok(out)
}

/// Drift of a parametric model at every step `X_0 .. X_{N-1}`.
pub fn model_drift_path(x: &LatentPath, model: &DriftModel, theta: &[f64]) -> Result<Array2<f64>> {
    if model.dimension() != x.dimension() || theta.len() != model.n_params() {
        return Err(Error::invalid("drift model does not match the path or parameter vector"));
    }
    let n = x.n_steps();
    let mut out = Array2::zeros((n, x.dimension()));
    let mut scratch = Vec::new();
    for j in 0..n {
        let state = x.states.row(j);
        model.eval_into(
            theta,
            state.as_slice().expect("row-major path"),
            x.time(j),
            &mut scratch,
            out.row_mut(j).as_slice_mut().expect("row-major"),
        );
    }
    Ok(out)
}

/// `S_i = sum_j ((X_{j+1} - X_j)/dt - drift_{j,i})^2` for each component.
pub fn residual_sums(x: &LatentPath, drift_eval: &Array2<f64>) -> Vec<f64> {
    let p = x.dimension();
    let mut s = vec![0.0; p];
    for j in 0..x.n_steps() {
        for i in 0..p {
            let r = (x.states[[j + 1, i]] - x.states[[j, i]]) / x.dt - drift_eval[[j, i]];
            s[i] += r * r;
        }
    }
    s
}

/// Shape and rate of the inverse-gamma full conditional of one `Sigma_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvGammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl InvGammaParams {
    pub fn mean(&self) -> f64 {
        self.rate / (self.shape - 1.0)
    }
}

pub(crate) fn sigma_params_from_sums(sums: &[f64], n: usize, dt: f64, alpha: f64, beta: f64) -> Vec<InvGammaParams> {
    sums.iter()
        .map(|s| InvGammaParams {
            shape: n as f64 / 2.0 + alpha,
            rate: beta + 0.5 * dt * s,
        })
        .collect()
}

/// Inverse-gamma full conditionals of the diffusion diagonal.
pub fn sigma_conditional_params(
    x: &LatentPath,
    drift_eval: &Array2<f64>,
    alpha: f64,
    beta: f64,
) -> Result<Vec<InvGammaParams>> {
    if drift_eval.nrows() != x.n_steps() || drift_eval.ncols() != x.dimension() {
        return Err(Error::invalid("drift evaluations must be N x p"));
    }
    let sums = residual_sums(x, drift_eval);
    Ok(sigma_params_from_sums(&sums, x.n_steps(), x.dt, alpha, beta))
}

/// Independent inverse-gamma draws, one per component.
pub fn sample_sigma<R: Rng + ?Sized>(params: &[InvGammaParams], rng: &mut R) -> Result<DiffusionSpec> {
    let draws = params
        .iter()
        .map(|ig| {
            if !(ig.shape > 0.0 && ig.rate > 0.0) {
                return Err(Error::invalid("inverse-gamma shape and rate must be positive"));
            }
            let g = Gamma::new(ig.shape, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
            Ok(ig.rate / g.sample(rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiffusionSpec { sigma_diag: draws })
}

/// `-(alpha + N/2) * sum_i log(beta + dt/2 * S_i)`.
pub(crate) fn integrated_diffusion_term(sums: &[f64], n: usize, dt: f64, alpha: f64, beta: f64) -> f64 {
    let expo = alpha + n as f64 / 2.0;
    -expo * sums.iter().map(|s| (beta + 0.5 * dt * s).ln()).sum::<f64>()
}

/// `log N(b; 0, tau^2)`.
pub(crate) fn log_normal0(b: f64, tau: f64) -> f64 {
    -0.5 * (LN_2PI + 2.0 * tau.ln() + b * b / (tau * tau))
}

/// Conditional spike-and-slab prior of B given the indicators.
pub fn log_coefficient_prior(b: &CoefficientMatrix, gamma: &InclusionMask, tau0: f64, tau1: f64) -> f64 {
    b.values
        .iter()
        .zip(gamma.flags.iter())
        .map(|(&v, &g)| log_normal0(v, if g == 1 { tau1 } else { tau0 }))
        .sum()
}

/// `sum log q^gamma (1 - q)^(1 - gamma)`.
pub fn log_inclusion_prior(gamma: &InclusionMask, q: &Array2<f64>) -> f64 {
    gamma
        .flags
        .iter()
        .zip(q.iter())
        .map(|(&g, &q)| if g == 1 { q.ln() } else { (1.0 - q).ln() })
        .sum()
}

fn check_path_obs(x: &LatentPath, obs: &ObservationSet, mu0: &[f64]) -> Result<Vec<usize>> {
    if obs.dimension() != x.dimension() || mu0.len() != x.dimension() {
        return Err(Error::invalid("path, observations and X0 prior differ in dimension"));
    }
    if x.n_steps() == 0 {
        return Err(Error::invalid("path needs at least one Euler step"));
    }
    obs.grid_indices(x.t0, x.dt, x.n_steps())
}

/// Log marginal density of `(X, B, gamma)` given the data, up to a constant.
pub fn log_linchpin_ss(
    x: &LatentPath,
    b: &CoefficientMatrix,
    gamma: &InclusionMask,
    obs: &ObservationSet,
    h: &SSHyperParams,
) -> Result<f64> {
    let idx = check_path_obs(x, obs, &h.mu0)?;
    if gamma.flags.dim() != b.values.dim() || h.q.dim() != b.values.dim() {
        return Err(Error::invalid("B, gamma and q must share one shape"));
    }
    let lik = finite(observation_loglik_at(x, obs, &idx), "observation likelihood")?;
    let x0 = x.states.row(0).to_vec();
    let init = finite(log_initial_prior(&x0, &h.mu0, &h.lambda0_sq), "X0 prior")?;
    let coef = finite(log_coefficient_prior(b, gamma, h.tau0, h.tau1), "coefficient prior")?;
    let incl = finite(log_inclusion_prior(gamma, &h.q), "inclusion prior")?;
    let drift = dictionary_drift_path(x, b)?;
    let sums = residual_sums(x, &drift);
    let diffusion = finite(
        integrated_diffusion_term(&sums, x.n_steps(), x.dt, h.alpha, h.beta),
        "integrated diffusion",
    )?;
    Ok(lik + init + coef + incl + diffusion)
}

/// `log N_d(theta; m0, s0^2 I)`.
pub fn log_parameter_prior(theta: &[f64], m0: &[f64], s0_sq: f64) -> f64 {
    theta
        .iter()
        .zip(m0)
        .map(|(t, m)| -0.5 * (LN_2PI + s0_sq.ln() + (t - m).powi(2) / s0_sq))
        .sum()
}

/// Log marginal density of `(X, theta)` given the data, up to a constant.
pub fn log_linchpin_inf(
    x: &LatentPath,
    theta: &[f64],
    obs: &ObservationSet,
    model: &DriftModel,
    h: &InfHyperParams,
) -> Result<f64> {
    let idx = check_path_obs(x, obs, &h.mu0)?;
    if h.m0.len() != theta.len() {
        return Err(Error::invalid("m0 and theta differ in length"));
    }
    let lik = finite(observation_loglik_at(x, obs, &idx), "observation likelihood")?;
    let x0 = x.states.row(0).to_vec();
    let init = finite(log_initial_prior(&x0, &h.mu0, &h.lambda0_sq), "X0 prior")?;
    let prior = finite(log_parameter_prior(theta, &h.m0, h.s0_sq), "parameter prior")?;
    let drift = model_drift_path(x, model, theta)?;
    let sums = residual_sums(x, &drift);
    let diffusion = finite(
        integrated_diffusion_term(&sums, x.n_steps(), x.dt, h.alpha, h.beta),
        "integrated diffusion",
    )?;
    Ok(lik + init + prior + diffusion)
}

/// Log joint density of `(X, theta, Sigma)` without integrating `Sigma`,
/// dropping only terms constant in all three.
pub fn log_joint_inf(
    x: &LatentPath,
    theta: &[f64],
    sigma: &[f64],
    obs: &ObservationSet,
    model: &DriftModel,
    h: &InfHyperParams,
) -> Result<f64> {
    let idx = check_path_obs(x, obs, &h.mu0)?;
    if sigma.len() != x.dimension() || sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("Sigma must be a positive diagonal of length p"));
    }
    let lik = finite(observation_loglik_at(x, obs, &idx), "observation likelihood")?;
    let x0 = x.states.row(0).to_vec();
    let init = finite(log_initial_prior(&x0, &h.mu0, &h.lambda0_sq), "X0 prior")?;
    let prior = finite(log_parameter_prior(theta, &h.m0, h.s0_sq), "parameter prior")?;
    let drift = model_drift_path(x, model, theta)?;
    let sums = residual_sums(x, &drift);
    let sde = finite(
        diffusion_joint_term(&sums, sigma, x.n_steps(), x.dt, h.alpha, h.beta),
        "transition density",
    )?;
    Ok(lik + init + prior + sde)
}

/// Transition densities plus the inverse-gamma prior for a fixed `Sigma`.
pub(crate) fn diffusion_joint_term(sums: &[f64], sigma: &[f64], n: usize, dt: f64, alpha: f64, beta: f64) -> f64 {
    sums.iter()
        .zip(sigma)
        .map(|(s, sg)| -(n as f64 / 2.0 + alpha + 1.0) * sg.ln() - (beta + 0.5 * dt * s) / sg)
        .sum()
}

/// `P(gamma = 1 | B, q)` under spike sd `tau0` and slab sd `tau1`.
pub fn gamma_inclusion_prob(b: f64, q: f64, tau0: f64, tau1: f64) -> f64 {
    let log_odds = gamma_inclusion_log_odds(b, q, tau0, tau1);
    if log_odds >= 0.0 {
        1.0 / (1.0 + (-log_odds).exp())
    } else {
        let e = log_odds.exp();
        e / (1.0 + e)
    }
}

/// `log P(gamma = 1 | .) - log P(gamma = 0 | .)`.
pub fn gamma_inclusion_log_odds(b: f64, q: f64, tau0: f64, tau1: f64) -> f64 {
    let slab = q.ln() - tau1.ln() - b * b / (2.0 * tau1 * tau1);
    let spike = (1.0 - q).ln() - tau0.ln() - b * b / (2.0 * tau0 * tau0);
    slab - spike
}

/// `|B|` at which spike and slab densities coincide (requires `tau1 > tau0`).
pub fn spike_slab_crossing(tau0: f64, tau1: f64) -> f64 {
    let t0 = tau0 * tau0;
    let t1 = tau1 * tau1;
    (2.0 * t0 * t1 * (tau1 / tau0).ln() / (t1 - t0)).sqrt()
}
