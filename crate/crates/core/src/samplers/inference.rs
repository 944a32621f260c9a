//! Parameter inference on a fixed drift model, with `Sigma` integrated out
//! (linchpin) or carried explicitly (the vanilla baseline in `vanilla.rs`).

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    acceptance_entry, block_scale_from_trace, complete_sigma, interpolate_start, metropolis_accept, path_log_terms,
    path_precision_trace, propose_block, scalar_scale_from_curvature, Adapter, ChainKind, ChainOutput, ChainSettings,
    ProposalScales, Recorder,
};
use crate::dynamics::{dictionary_drift, DriftModel, LatentPath, ObservationSet};
use crate::error::{Error, Result};
use crate::posterior::{
    diffusion_joint_term, integrated_diffusion_term, log_joint_inf, log_linchpin_inf, log_parameter_prior,
    InfHyperParams,
};

/// Joint state of the inference chain.
#[derive(Debug, Clone, PartialEq)]
pub struct InfChainState {
    pub path: LatentPath,
    pub theta: Vec<f64>,
}

impl InfChainState {
    pub fn new(path: LatentPath, theta: Vec<f64>) -> Self {
        Self { path, theta }
    }

    pub fn interpolated(obs: &ObservationSet, theta: Vec<f64>, t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        Ok(Self::new(interpolate_start(obs, t0, dt, n_steps)?, theta))
    }
}

/// Path-dependent pieces of the drift residuals.
struct PathCache {
    /// Dictionary features per step, only for dictionary models.
    feats: Option<Array2<f64>>,
    incr: Array2<f64>,
    drift: Array2<f64>,
}

impl PathCache {
    fn new(model: &DriftModel, path: &LatentPath) -> Self {
        let (n, p) = (path.n_steps(), path.dimension());
        let feats = match model {
            DriftModel::Dictionary { basis, .. } => Some(Array2::zeros((n, basis.p_star()))),
            _ => None,
        };
        Self {
            feats,
            incr: Array2::zeros((n, p)),
            drift: Array2::zeros((n, p)),
        }
    }

    fn fill(&mut self, model: &DriftModel, path: &LatentPath, theta: &[f64], scratch: &mut Vec<f64>) {
        if let (DriftModel::Dictionary { basis, .. }, Some(feats)) = (model, self.feats.as_mut()) {
            for j in 0..path.n_steps() {
                basis.features_into(
                    path.states.row(j).as_slice().expect("standard layout"),
                    path.time(j),
                    feats.row_mut(j).as_slice_mut().expect("standard layout"),
                );
            }
        }
        for j in 0..path.n_steps() {
            for i in 0..path.dimension() {
                self.incr[[j, i]] = (path.states[[j + 1, i]] - path.states[[j, i]]) / path.dt;
            }
        }
        let mut drift = std::mem::take(&mut self.drift);
        self.drift_into(model, path, theta, scratch, &mut drift);
        self.drift = drift;
    }

    fn drift_into(&self, model: &DriftModel, path: &LatentPath, theta: &[f64], scratch: &mut Vec<f64>, out: &mut Array2<f64>) {
        match (model, &self.feats) {
            (DriftModel::Dictionary { support, .. }, Some(feats)) => {
                for (f, mut o) in feats.outer_iter().zip(out.outer_iter_mut()) {
                    dictionary_drift(
                        support,
                        theta,
                        f.as_slice().expect("standard layout"),
                        o.as_slice_mut().expect("standard layout"),
                    );
                }
            }
            _ => {
                for j in 0..path.n_steps() {
                    model.eval_into(
                        theta,
                        path.states.row(j).as_slice().expect("standard layout"),
                        path.time(j),
                        scratch,
                        out.row_mut(j).as_slice_mut().expect("standard layout"),
                    );
                }
            }
        }
    }

    fn sums_with(&self, drift: &Array2<f64>) -> Vec<f64> {
        let mut s = vec![0.0; drift.ncols()];
        for (d, f) in self.incr.outer_iter().zip(drift.outer_iter()) {
            for i in 0..s.len() {
                let r = d[i] - f[i];
                s[i] += r * r;
            }
        }
        s
    }
}

/// The `Sigma`-dependent part of the target: integrated out, or at the
/// current explicit value.
fn diffusion_log(sums: &[f64], sigma: Option<&[f64]>, n: usize, dt: f64, h: &InfHyperParams) -> f64 {
    match sigma {
        None => integrated_diffusion_term(sums, n, dt, h.alpha, h.beta),
        Some(s) => diffusion_joint_term(sums, s, n, dt, h.alpha, h.beta),
    }
}

/// Runs the linchpin inference chain: each parameter in turn, then one
/// block move of the whole path.
pub fn run_inference_chain(
    obs: &ObservationSet,
    model: &DriftModel,
    h: &InfHyperParams,
    init: InfChainState,
    settings: &ChainSettings,
) -> Result<ChainOutput> {
    run_drift_chain(obs, model, h, init, None, settings)
}

/// Shared engine. With `sigma0` set, `Sigma` is part of the state and moves
/// by random walk on the log scale after the drift parameters.
pub(crate) fn run_drift_chain(
    obs: &ObservationSet,
    model: &DriftModel,
    h: &InfHyperParams,
    init: InfChainState,
    sigma0: Option<Vec<f64>>,
    settings: &ChainSettings,
) -> Result<ChainOutput> {
    let started = Instant::now();
    settings.validate()?;
    h.validate()?;
    let InfChainState { path, mut theta } = init;
    let mut path = LatentPath::new(path.t0, path.dt, path.states.as_standard_layout().to_owned())?;
    let as_init = |e: Error| match e {
        Error::Evaluation { term } => Error::Initialization { term },
        other => other,
    };
    match &sigma0 {
        None => log_linchpin_inf(&path, &theta, obs, model, h).map_err(as_init)?,
        Some(s) => log_joint_inf(&path, &theta, s, obs, model, h).map_err(as_init)?,
    };

    let vanilla = sigma0.is_some();
    let mut sigma = sigma0.unwrap_or_default();
    let (p, n, dt, d) = (path.dimension(), path.n_steps(), path.dt, theta.len());
    let idx = obs.grid_indices(path.t0, dt, n)?;
    let n_scalar = d + if vanilla { p } else { 0 };

    let mut scratch = Vec::new();
    let mut cache = PathCache::new(model, &path);
    cache.fill(model, &path, &theta, &mut scratch);
    let mut sums = cache.sums_with(&cache.drift);
    let mut path_log = path_log_terms(&path, obs, &idx, &h.mu0, &h.lambda0_sq);

    let mut scales = match &settings.initial_scales {
        Some(s) if s.params.len() == n_scalar => s.clone(),
        Some(_) => return Err(Error::invalid(format!("chain needs {n_scalar} parameter scales"))),
        None => {
            let target = |th: &[f64], scratch: &mut Vec<f64>| {
                let mut drift = Array2::zeros(cache.drift.dim());
                cache.drift_into(model, &path, th, scratch, &mut drift);
                log_parameter_prior(th, &h.m0, h.s0_sq)
                    + diffusion_log(&cache.sums_with(&drift), vanilla.then_some(sigma.as_slice()), n, dt, h)
            };
            let f0 = target(&theta, &mut scratch);
            let mut params = Vec::with_capacity(n_scalar);
            for k in 0..d {
                let eps = 1e-4 * theta[k].abs().max(1.0);
                let mut th = theta.clone();
                th[k] += eps;
                let up = target(&th, &mut scratch);
                th[k] -= 2.0 * eps;
                let down = target(&th, &mut scratch);
                let curvature = -(up + down - 2.0 * f0) / (eps * eps);
                params.push(scalar_scale_from_curvature(curvature, 0.1 * theta[k].abs().max(1.0)));
            }
            if vanilla {
                params.extend(std::iter::repeat_n(
                    scalar_scale_from_curvature(n as f64 / 2.0 + h.alpha, 0.1),
                    p,
                ));
            }
            let expo = h.alpha + n as f64 / 2.0;
            let sigma_hat: Vec<f64> = if vanilla {
                sigma.clone()
            } else {
                sums.iter().map(|s| (h.beta + 0.5 * dt * s) / expo).collect()
            };
            let x = block_scale_from_trace(path_precision_trace(n, dt, &sigma_hat, &h.lambda0_sq, obs));
            ProposalScales::new(x, params)
        }
    };

    let mut proposal = path.clone();
    let mut prop_cache = PathCache::new(model, &path);
    let mut prop_drift = cache.drift.clone();
    let mut adapter = Adapter::new(n_scalar, settings.burn_in);
    let mut recorder = Recorder::new(path.states.dim(), settings.record_latent);
    let mut sigma_draws: Vec<f64> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let sig = |s: &[f64]| if vanilla { Some(s.to_vec()) } else { None };

    for iter in 0..settings.iterations {
        let current_sigma = sig(&sigma);
        for k in 0..d {
            let cur = theta[k];
            let old_log = log_parameter_prior(&theta, &h.m0, h.s0_sq)
                + diffusion_log(&sums, current_sigma.as_deref(), n, dt, h);
            theta[k] = cur + scales.params[k] * rng.sample::<f64, _>(StandardNormal);
            cache.drift_into(model, &path, &theta, &mut scratch, &mut prop_drift);
            let prop_sums = cache.sums_with(&prop_drift);
            let new_log = log_parameter_prior(&theta, &h.m0, h.s0_sq)
                + diffusion_log(&prop_sums, current_sigma.as_deref(), n, dt, h);
            let accepted = metropolis_accept(new_log - old_log, &mut rng);
            if accepted {
                std::mem::swap(&mut cache.drift, &mut prop_drift);
                sums = prop_sums;
            } else {
                theta[k] = cur;
            }
            adapter.record_param(iter, k, accepted);
        }

        if vanilla {
            let expo = n as f64 / 2.0 + h.alpha + 1.0;
            for i in 0..p {
                let rate = h.beta + 0.5 * dt * sums[i];
                let u = sigma[i].ln();
                let u_new = u + scales.params[d + i] * rng.sample::<f64, _>(StandardNormal);
                let term = |u: f64| -expo * u - rate * (-u).exp() + u;
                let accepted = metropolis_accept(term(u_new) - term(u), &mut rng);
                if accepted {
                    sigma[i] = u_new.exp();
                }
                adapter.record_param(iter, d + i, accepted);
            }
        }

        let current_sigma = sig(&sigma);
        propose_block(
            path.states.as_slice().expect("standard layout"),
            scales.x,
            &mut rng,
            proposal.states.as_slice_mut().expect("standard layout"),
        );
        prop_cache.fill(model, &proposal, &theta, &mut scratch);
        let prop_sums = prop_cache.sums_with(&prop_cache.drift);
        let prop_path_log = path_log_terms(&proposal, obs, &idx, &h.mu0, &h.lambda0_sq);
        let log_ratio = prop_path_log + diffusion_log(&prop_sums, current_sigma.as_deref(), n, dt, h)
            - path_log
            - diffusion_log(&sums, current_sigma.as_deref(), n, dt, h);
        let accepted = metropolis_accept(log_ratio, &mut rng);
        if accepted {
            std::mem::swap(&mut path, &mut proposal);
            std::mem::swap(&mut cache, &mut prop_cache);
            sums = prop_sums;
            path_log = prop_path_log;
        }
        adapter.record_x(iter, accepted);
        adapter.end_iteration(iter, &mut scales);

        if settings.records(iter) {
            let rates: Vec<f64> = sums.iter().map(|s| h.beta + 0.5 * dt * s).collect();
            recorder.push(&theta, None, &rates, &path.states);
            if vanilla {
                sigma_draws.extend_from_slice(&sigma);
            }
        }
    }

    let count = recorder.count();
    let draws = recorder.finish(d, 0, p);
    let shape = h.alpha + n as f64 / 2.0;
    let sigma_out = if vanilla {
        Array2::from_shape_vec((count, p), sigma_draws).expect("sigma rows")
    } else {
        complete_sigma(&draws.rates, shape, settings.seed)?
    };
    let names = model.param_names();
    let totals = adapter.totals();
    let mut acceptance = vec![acceptance_entry("X".into(), totals.x, scales.x)];
    for (k, name) in names.iter().enumerate() {
        acceptance.push(acceptance_entry(name.clone(), totals.params[k], scales.params[k]));
    }
    if vanilla {
        for i in 0..p {
            acceptance.push(acceptance_entry(
                format!("log Sigma[{}]", i + 1),
                totals.params[d + i],
                scales.params[d + i],
            ));
        }
    }
    Ok(ChainOutput {
        kind: if vanilla { ChainKind::Vanilla } else { ChainKind::Inference },
        param_names: names,
        params: draws.params,
        coefficient_shape: None,
        inclusion: None,
        sigma: sigma_out,
        sigma_rates: draws.rates,
        sigma_shape: shape,
        latent_mean: draws.latent_mean,
        latent_draws: draws.latent_draws,
        final_path: path,
        acceptance,
        scales,
        settings: settings.clone(),
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::DictionaryBasis;
    use crate::dynamics::{euler_maruyama_simulate, observe, DiffusionSpec, SystemSpec};
    use crate::samplers::{run_vanilla_chain, VanillaInit};

    fn moments(v: impl Iterator<Item = f64>) -> (f64, f64) {
        let v: Vec<f64> = v.collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, var)
    }

    fn free_problem() -> (ObservationSet, DriftModel, InfHyperParams, InfChainState) {
        let model = DriftModel::Dictionary {
            basis: DictionaryBasis::new(1).unwrap(),
            support: vec![],
        };
        let h = InfHyperParams {
            m0: vec![],
            s0_sq: 4.0,
            alpha: 5.0,
            beta: 4.0,
            mu0: vec![0.5],
            lambda0_sq: vec![1.0],
        };
        let path = LatentPath::new(0.0, 0.1, Array2::from_elem((4, 1), 0.5)).unwrap();
        (ObservationSet::unobserved(1), model, h, InfChainState::new(path, vec![]))
    }

    #[test]
    fn free_path_matches_prior_moments() {
        let (obs, model, h, init) = free_problem();
        let mut settings = ChainSettings::new(1_000_000, 20_000, 10, 8);
        settings.record_latent = true;
        let out = run_inference_chain(&obs, &model, &h, init, &settings).unwrap();
        let (m0, v0) = moments(out.latent_draws.iter().map(|x| x[[0, 0]]));
        let (_, v3) = moments(out.latent_draws.iter().map(|x| x[[3, 0]]));
        // X_0 ~ N(0.5, 1); X_3 - X_0 is Student-t with variance 3 * dt * beta / (alpha - 1).
        assert!((m0 - 0.5).abs() < 0.1, "mean {m0}");
        assert!((v0 - 1.0).abs() < 0.1, "var {v0}");
        assert!((v3 - 1.3).abs() < 0.15, "var {v3}");
        let (ms, _) = moments(out.sigma.column(0).iter().copied());
        assert!((ms - 1.0).abs() < 0.1, "Sigma mean {ms}");
    }

    #[test]
    fn vanilla_free_path_sigma_prior() {
        let (obs, model, h, init) = free_problem();
        let settings = ChainSettings::new(300_000, 20_000, 10, 8);
        let out = run_vanilla_chain(&obs, &model, &h, VanillaInit { state: init, sigma: Some(vec![1.0]) }, &settings)
            .unwrap();
        let (ms, _) = moments(out.sigma.column(0).iter().copied());
        assert!((ms - 1.0).abs() < 0.15, "Sigma mean {ms}");
        let (m0, _) = moments(out.latent_mean.column(0).iter().copied());
        assert!((m0 - 0.5).abs() < 0.2);
    }

    #[test]
    fn linchpin_and_vanilla_agree_on_ou() {
        let spec = SystemSpec::ornstein_uhlenbeck(2.0);
        let traj = euler_maruyama_simulate(&spec, &DiffusionSpec::isotropic(1, 1.0).unwrap(), None, 0.0, 2.0, 0.01, 50.0, 3)
            .unwrap();
        let obs = observe(&traj, 20, &[0.05], 4).unwrap();
        let h = InfHyperParams {
            m0: vec![0.0],
            s0_sq: 4.0,
            alpha: 2.0,
            beta: 1.0,
            mu0: vec![obs.values[[0, 0]]],
            lambda0_sq: vec![1.0],
        };
        let model = DriftModel::OrnsteinUhlenbeck;
        let init = InfChainState::new(traj.clone(), vec![2.0]);
        // Pin the path so both chains target the same conditional of theta
        // and Sigma, which they must agree on exactly.
        let mut settings = ChainSettings::new(60_000, 0, 1, 5);
        settings.initial_scales = Some(ProposalScales::new(1e-12, vec![0.9]));
        let lin = run_inference_chain(&obs, &model, &h, init.clone(), &settings).unwrap();
        settings.initial_scales = Some(ProposalScales::new(1e-12, vec![0.9, 0.25]));
        let van = run_vanilla_chain(&obs, &model, &h, VanillaInit { state: init, sigma: None }, &settings).unwrap();
        let (ml, vl) = moments(lin.params.column(0).iter().copied());
        let (mv, vv) = moments(van.params.column(0).iter().copied());
        assert!((ml - mv).abs() < 0.1 * vl.sqrt(), "{ml} vs {mv}");
        assert!((vl / vv - 1.0).abs() < 0.15, "{vl} vs {vv}");
        let (sl, _) = moments(lin.sigma.column(0).iter().copied());
        let (sv, _) = moments(van.sigma.column(0).iter().copied());
        assert!((sl - sv).abs() < 0.02 * sl, "{sl} vs {sv}");
    }

    #[test]
    fn dictionary_and_builtin_models_agree() {
        let spec = SystemSpec::ornstein_uhlenbeck(2.0);
        let traj = euler_maruyama_simulate(&spec, &DiffusionSpec::isotropic(1, 1.0).unwrap(), None, 0.0, 1.0, 0.01, 10.0, 6)
            .unwrap();
        let obs = observe(&traj, 20, &[0.05], 7).unwrap();
        let h = InfHyperParams {
            m0: vec![0.0],
            s0_sq: 4.0,
            alpha: 2.0,
            beta: 1.0,
            mu0: vec![0.0],
            lambda0_sq: vec![1.0],
        };
        let basis = DictionaryBasis::new(1).unwrap();
        let dict = DriftModel::Dictionary {
            support: vec![(0, basis.linear(0))],
            basis,
        };
        let settings = ChainSettings::new(2_000, 500, 1, 11);
        let a = run_inference_chain(&obs, &DriftModel::OrnsteinUhlenbeck, &h, InfChainState::new(traj.clone(), vec![2.0]), &settings)
            .unwrap();
        let b = run_inference_chain(&obs, &dict, &h, InfChainState::new(traj, vec![-2.0]), &settings).unwrap();
        // theta_OU = -B[1,2]: the dictionary chain is the mirror image.
        let m = a.params.column(0).iter().sum::<f64>() / 1500.0;
        let mb = b.params.column(0).iter().sum::<f64>() / 1500.0;
        assert!((m + mb).abs() < 0.5, "{m} vs {mb}");
    }
}
