//! Equation-selection chain over `(X, B, gamma)` with `Sigma` integrated out.
//!
//! Residual sums are kept in Gram form, `S_i = d_i - 2 b_i.C_i + b_i' G b_i`
//! with `G = F'F` and `C = F'D` over the dictionary features `F` and scaled
//! increments `D`, so a single-entry update of B costs `O(p*)`. The Gram
//! matrices are rebuilt only when a path proposal is accepted.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    acceptance_entry, block_scale_from_trace, complete_sigma, interpolate_start, metropolis_accept, path_log_terms,
    path_precision_trace, propose_block, scalar_scale_from_curvature, Adapter, ChainKind, ChainOutput, ChainSettings,
    ProposalScales, Recorder,
};
use crate::dictionary::{encode_known_system, CoefficientMatrix, DictionaryBasis, InclusionMask};
use crate::dynamics::{LatentPath, ObservationSet, SystemId};
use crate::error::{Error, Result};
use crate::posterior::{gamma_inclusion_prob, log_linchpin_ss, log_normal0, SSHyperParams};

/// Joint state of the selection chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SSChainState {
    pub path: LatentPath,
    pub b: CoefficientMatrix,
    pub gamma: InclusionMask,
}

impl SSChainState {
    pub fn new(path: LatentPath, b: CoefficientMatrix, gamma: InclusionMask) -> Result<Self> {
        let p = path.dimension();
        let basis = DictionaryBasis::new(p)?;
        if b.values.dim() != (p, basis.p_star()) || gamma.flags.dim() != b.values.dim() {
            return Err(Error::invalid(format!(
                "B and gamma must be {p} x {} for a {p}-dimensional path",
                basis.p_star()
            )));
        }
        Ok(Self { path, b, gamma })
    }

    /// The true coefficients and support of a built-in system on `path`.
    pub fn truth(path: LatentPath, system: SystemId, theta: &[f64]) -> Result<Self> {
        let (b, gamma) = encode_known_system(system, theta)?;
        Self::new(path, b, gamma)
    }

    /// Interpolated path, ridge least-squares B fitted to its increments,
    /// and each indicator set to its conditional mode given B.
    pub fn interpolated(obs: &ObservationSet, h: &SSHyperParams, t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        let path = interpolate_start(obs, t0, dt, n_steps)?;
        let basis = DictionaryBasis::new(path.dimension())?;
        let cache = GramCache::build(&basis, &path);
        let b = ridge_coefficients(&cache)?;
        let gamma = InclusionMask {
            flags: Array2::from_shape_fn(b.values.dim(), |(i, j)| {
                u8::from(gamma_inclusion_prob(b.values[[i, j]], h.q[[i, j]], h.tau0, h.tau1) > 0.5)
            }),
        };
        Self::new(path, b, gamma)
    }
}

/// Features, increments and their Gram products for one path.
struct GramCache {
    n: usize,
    dt: f64,
    p: usize,
    ps: usize,
    /// `N x p*`, row `j` is the dictionary at `(t_j, X_j)`.
    feats: Array2<f64>,
    /// `N x p`, row `j` is `(X_{j+1} - X_j)/dt`.
    incr: Array2<f64>,
    gram: Array2<f64>,
    cross: Array2<f64>,
}

impl GramCache {
    fn build(basis: &DictionaryBasis, path: &LatentPath) -> Self {
        let n = path.n_steps();
        let mut cache = Self {
            n,
            dt: path.dt,
            p: basis.p(),
            ps: basis.p_star(),
            feats: Array2::zeros((n, basis.p_star())),
            incr: Array2::zeros((n, basis.p())),
            gram: Array2::zeros((basis.p_star(), basis.p_star())),
            cross: Array2::zeros((basis.p_star(), basis.p())),
        };
        cache.fill_path_terms(basis, path);
        cache.refresh_gram();
        cache
    }

    fn fill_path_terms(&mut self, basis: &DictionaryBasis, path: &LatentPath) {
        fill_features(basis, path, &mut self.feats, &mut self.incr);
    }

    fn refresh_gram(&mut self) {
        let ps = self.ps;
        self.gram.fill(0.0);
        self.cross.fill(0.0);
        for j in 0..self.n {
            let f = self.feats.row(j);
            let d = self.incr.row(j);
            for a in 0..ps {
                let fa = f[a];
                for c in a..ps {
                    self.gram[[a, c]] += fa * f[c];
                }
                for i in 0..self.p {
                    self.cross[[a, i]] += fa * d[i];
                }
            }
        }
        for a in 0..ps {
            for c in 0..a {
                self.gram[[a, c]] = self.gram[[c, a]];
            }
        }
    }

    /// Residual sums straight from the residuals.
    fn sums(&self, b: &CoefficientMatrix) -> Vec<f64> {
        direct_sums(&self.feats, &self.incr, b)
    }

    /// Change in `S_i` when `B[i, j]` moves by `delta`.
    fn entry_delta(&self, b: &CoefficientMatrix, i: usize, j: usize, delta: f64) -> f64 {
        let gb: f64 = self.gram.row(j).iter().zip(b.values.row(i)).map(|(g, v)| g * v).sum();
        -2.0 * delta * (self.cross[[j, i]] - gb) + delta * delta * self.gram[[j, j]]
    }
}

fn fill_features(basis: &DictionaryBasis, path: &LatentPath, feats: &mut Array2<f64>, incr: &mut Array2<f64>) {
    let p = basis.p();
    for j in 0..path.n_steps() {
        let x = path.states.row(j);
        basis.features_into(
            x.as_slice().expect("standard-layout path"),
            path.time(j),
            feats.row_mut(j).as_slice_mut().expect("standard-layout features"),
        );
        for i in 0..p {
            incr[[j, i]] = (path.states[[j + 1, i]] - x[i]) / path.dt;
        }
    }
}

fn direct_sums(feats: &Array2<f64>, incr: &Array2<f64>, b: &CoefficientMatrix) -> Vec<f64> {
    let p = b.p();
    let mut s = vec![0.0; p];
    for (f, d) in feats.outer_iter().zip(incr.outer_iter()) {
        for i in 0..p {
            let drift: f64 = b.values.row(i).iter().zip(f.iter()).map(|(c, v)| c * v).sum();
            let r = d[i] - drift;
            s[i] += r * r;
        }
    }
    s
}

/// Row-wise ridge solve `(G + lambda I) b_i = C_i`.
fn ridge_coefficients(cache: &GramCache) -> Result<CoefficientMatrix> {
    let ps = cache.ps;
    if cache.gram.iter().chain(cache.cross.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Initialization { term: "dictionary Gram matrix" });
    }
    let trace: f64 = (0..ps).map(|a| cache.gram[[a, a]]).sum();
    let lambda = 1e-3 * trace / ps as f64 + 1e-12;
    let g = DMatrix::from_fn(ps, ps, |a, c| cache.gram[[a, c]] + if a == c { lambda } else { 0.0 });
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::invalid("ridge system for the starting coefficients is not positive definite"))?;
    let mut b = Array2::zeros((cache.p, ps));
    for i in 0..cache.p {
        let rhs = DVector::from_fn(ps, |a, _| cache.cross[[a, i]]);
        let sol = chol.solve(&rhs);
        for a in 0..ps {
            b[[i, a]] = sol[a];
        }
    }
    CoefficientMatrix::new(b)
}

/// Draws every indicator from its Bernoulli full conditional, row-major.
pub fn gibbs_gamma_sweep<R: Rng + ?Sized>(
    b: &CoefficientMatrix,
    gamma: &mut InclusionMask,
    h: &SSHyperParams,
    rng: &mut R,
) {
    for ((ij, g), &q) in gamma.flags.indexed_iter_mut().zip(h.q.iter()) {
        let prob = gamma_inclusion_prob(b.values[ij], q, h.tau0, h.tau1);
        let u: f64 = rng.random();
        *g = u8::from(u < prob);
    }
}

fn integrated_row(sum: f64, expo: f64, half_dt: f64, beta: f64) -> f64 {
    -expo * (beta + half_dt * sum).ln()
}

/// Runs the selection chain: per iteration a gamma sweep, then every entry
/// of B in row-major order, then one block move of the whole path.
pub fn run_spike_slab_chain(
    obs: &ObservationSet,
    h: &SSHyperParams,
    init: SSChainState,
    settings: &ChainSettings,
) -> Result<ChainOutput> {
    let started = Instant::now();
    settings.validate()?;
    h.validate()?;
    let SSChainState { path, mut b, mut gamma } = init;
    let mut path = LatentPath::new(path.t0, path.dt, path.states.as_standard_layout().to_owned())?;
    log_linchpin_ss(&path, &b, &gamma, obs, h).map_err(|e| match e {
        Error::Evaluation { term } => Error::Initialization { term },
        other => other,
    })?;

    let basis = DictionaryBasis::new(path.dimension())?;
    let (p, ps, n, dt) = (basis.p(), basis.p_star(), path.n_steps(), path.dt);
    let idx = obs.grid_indices(path.t0, dt, n)?;
    let expo = h.alpha + n as f64 / 2.0;
    let half_dt = 0.5 * dt;
    let integrated = |sums: &[f64]| sums.iter().map(|&s| integrated_row(s, expo, half_dt, h.beta)).sum::<f64>();

    let mut cache = GramCache::build(&basis, &path);
    let mut sums = cache.sums(&b);
    let mut path_log = path_log_terms(&path, obs, &idx, &h.mu0, &h.lambda0_sq);

    let mut scales = match &settings.initial_scales {
        Some(s) if s.params.len() == p * ps => s.clone(),
        Some(_) => return Err(Error::invalid(format!("spike-and-slab chain needs {} parameter scales", p * ps))),
        None => initial_scales(&cache, &gamma, &sums, h, obs),
    };

    let mut proposal = path.clone();
    let mut prop_feats = cache.feats.clone();
    let mut prop_incr = cache.incr.clone();
    let mut adapter = Adapter::new(p * ps, settings.burn_in);
    let mut recorder = Recorder::new(path.states.dim(), settings.record_latent);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    for iter in 0..settings.iterations {
        gibbs_gamma_sweep(&b, &mut gamma, h, &mut rng);

        for i in 0..p {
            for j in 0..ps {
                let k = i * ps + j;
                let tau = if gamma.flags[[i, j]] == 1 { h.tau1 } else { h.tau0 };
                let cur = b.values[[i, j]];
                let delta = scales.params[k] * rng.sample::<f64, _>(StandardNormal);
                let s_new = (sums[i] + cache.entry_delta(&b, i, j, delta)).max(0.0);
                let log_ratio = log_normal0(cur + delta, tau) - log_normal0(cur, tau)
                    + integrated_row(s_new, expo, half_dt, h.beta)
                    - integrated_row(sums[i], expo, half_dt, h.beta);
                let accepted = metropolis_accept(log_ratio, &mut rng);
                if accepted {
                    b.values[[i, j]] = cur + delta;
                    sums[i] = s_new;
                }
                adapter.record_param(iter, k, accepted);
            }
        }

        // Incremental updates drift; the block step works from exact sums.
        sums = cache.sums(&b);
        propose_block(
            path.states.as_slice().expect("standard layout"),
            scales.x,
            &mut rng,
            proposal.states.as_slice_mut().expect("standard layout"),
        );
        fill_features(&basis, &proposal, &mut prop_feats, &mut prop_incr);
        let prop_sums = direct_sums(&prop_feats, &prop_incr, &b);
        let prop_path_log = path_log_terms(&proposal, obs, &idx, &h.mu0, &h.lambda0_sq);
        let log_ratio = prop_path_log + integrated(&prop_sums) - path_log - integrated(&sums);
        let accepted = metropolis_accept(log_ratio, &mut rng);
        if accepted {
            std::mem::swap(&mut path, &mut proposal);
            std::mem::swap(&mut cache.feats, &mut prop_feats);
            std::mem::swap(&mut cache.incr, &mut prop_incr);
            cache.refresh_gram();
            sums = prop_sums;
            path_log = prop_path_log;
        }
        adapter.record_x(iter, accepted);
        adapter.end_iteration(iter, &mut scales);

        if settings.records(iter) {
            let flat_b: Vec<f64> = b.values.t().iter().copied().collect();
            let flat_g: Vec<u8> = gamma.flags.t().iter().copied().collect();
            let rates: Vec<f64> = sums.iter().map(|s| h.beta + half_dt * s).collect();
            recorder.push(&flat_b, Some(&flat_g), &rates, &path.states);
        }
    }

    let draws = recorder.finish(p * ps, p * ps, p);
    let sigma = complete_sigma(&draws.rates, expo, settings.seed)?;
    let param_names = (0..ps)
        .flat_map(|j| (0..p).map(move |i| format!("B[{},{}]", i + 1, j + 1)))
        .collect();
    let totals = adapter.totals();
    let mut acceptance = vec![acceptance_entry("X".into(), totals.x, scales.x)];
    for i in 0..p {
        for j in 0..ps {
            let k = i * ps + j;
            acceptance.push(acceptance_entry(
                format!("B[{},{}]", i + 1, j + 1),
                totals.params[k],
                scales.params[k],
            ));
        }
    }
    Ok(ChainOutput {
        kind: ChainKind::SpikeSlab,
        param_names,
        params: draws.params,
        coefficient_shape: Some((p, ps)),
        inclusion: draws.inclusion,
        sigma,
        sigma_rates: draws.rates,
        sigma_shape: expo,
        latent_mean: draws.latent_mean,
        latent_draws: draws.latent_draws,
        final_path: path,
        acceptance,
        scales,
        settings: settings.clone(),
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}

/// Gauss-Newton curvature of each coordinate at the starting state.
fn initial_scales(
    cache: &GramCache,
    gamma: &InclusionMask,
    sums: &[f64],
    h: &SSHyperParams,
    obs: &ObservationSet,
) -> ProposalScales {
    let (n, p, ps) = (cache.n, cache.p, cache.ps);
    let expo = h.alpha + n as f64 / 2.0;
    let dt = cache.dt;
    let rates: Vec<f64> = sums.iter().map(|s| h.beta + 0.5 * dt * s).collect();
    let sigma_hat: Vec<f64> = rates.iter().map(|r| r / expo).collect();
    let x = block_scale_from_trace(path_precision_trace(n, dt, &sigma_hat, &h.lambda0_sq, obs));
    let mut params = Vec::with_capacity(p * ps);
    for i in 0..p {
        for j in 0..ps {
            let tau = if gamma.flags[[i, j]] == 1 { h.tau1 } else { h.tau0 };
            let curvature = expo * dt * cache.gram[[j, j]] / rates[i] + 1.0 / (tau * tau);
            params.push(scalar_scale_from_curvature(curvature, 0.1 * tau));
        }
    }
    ProposalScales::new(x, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{euler_maruyama_simulate, observe, DiffusionSpec, SystemSpec};
    use crate::posterior::{dictionary_drift_path, residual_sums};

    fn ou_problem(seed: u64) -> (ObservationSet, SSHyperParams, crate::dynamics::Trajectory) {
        let spec = SystemSpec::ornstein_uhlenbeck(2.0);
        let traj = euler_maruyama_simulate(&spec, &DiffusionSpec::isotropic(1, 1.0).unwrap(), None, 0.0, 2.0, 0.01, 50.0, seed)
            .unwrap();
        let obs = observe(&traj, 20, &[0.05], seed + 1).unwrap();
        let (_, mask) = encode_known_system(SystemId::OrnsteinUhlenbeck, &[2.0]).unwrap();
        let h = SSHyperParams {
            tau0: 0.09,
            tau1: 2.9,
            q: SSHyperParams::prior_inclusion(&mask, 0.9, 0.1),
            alpha: 2.0,
            beta: 1.0,
            mu0: vec![obs.values[[0, 0]]],
            lambda0_sq: vec![1.0],
        };
        (obs, h, traj)
    }

    #[test]
    fn gram_form_matches_residuals() {
        let (_, _, traj) = ou_problem(5);
        let basis = DictionaryBasis::new(1).unwrap();
        let cache = GramCache::build(&basis, &traj);
        let b = CoefficientMatrix::new(ndarray::array![[0.3, -1.7, 0.2, 0.5, -0.1]]).unwrap();
        let direct = residual_sums(&traj, &dictionary_drift_path(&traj, &b).unwrap());
        assert!((cache.sums(&b)[0] - direct[0]).abs() < 1e-9 * direct[0]);
        for j in 0..basis.p_star() {
            let mut moved = b.clone();
            moved.values[[0, j]] += 0.37;
            let expected = residual_sums(&traj, &dictionary_drift_path(&traj, &moved).unwrap())[0] - direct[0];
            let delta = cache.entry_delta(&b, 0, j, 0.37);
            assert!((delta - expected).abs() < 1e-8 * direct[0], "column {j}: {delta} vs {expected}");
        }
    }

    #[test]
    fn gibbs_sweep_frequencies() {
        let (_, h, _) = ou_problem(1);
        let b = CoefficientMatrix::new(ndarray::array![[0.1, -2.0, 0.0, 0.2, 0.05]]).unwrap();
        let mut gamma = InclusionMask::from_nonzero(&b);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 20_000;
        let mut hits = [0usize; 5];
        for _ in 0..n {
            gibbs_gamma_sweep(&b, &mut gamma, &h, &mut rng);
            for (j, hit) in hits.iter_mut().enumerate() {
                *hit += usize::from(gamma.flags[[0, j]]);
            }
        }
        for j in 0..5 {
            let p = gamma_inclusion_prob(b.values[[0, j]], h.q[[0, j]], h.tau0, h.tau1);
            let f = hits[j] as f64 / n as f64;
            assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-12, "entry {j}: {f} vs {p}");
        }
    }

    #[test]
    fn same_seed_same_chain() {
        let (obs, h, traj) = ou_problem(2);
        let n = traj.n_steps();
        let settings = ChainSettings::new(600, 200, 2, 17);
        let init = SSChainState::interpolated(&obs, &h, 0.0, 0.01, n).unwrap();
        let mut a = run_spike_slab_chain(&obs, &h, init.clone(), &settings).unwrap();
        let mut b = run_spike_slab_chain(&obs, &h, init, &settings).unwrap();
        a.elapsed_secs = 0.0;
        b.elapsed_secs = 0.0;
        assert_eq!(a, b);
        assert_eq!(a.n_samples(), 200);
        assert_eq!(a.params.ncols(), 5);
        assert_eq!(a.inclusion.as_ref().unwrap().ncols(), 5);
    }

    #[test]
    fn divergent_start_names_the_term() {
        let (obs, h, traj) = ou_problem(3);
        let mut bad = traj.clone();
        bad.states[[3, 0]] = 1e200;
        let (b, gamma) = encode_known_system(SystemId::OrnsteinUhlenbeck, &[2.0]).unwrap();
        let init = SSChainState::new(bad, b, gamma).unwrap();
        let err = run_spike_slab_chain(&obs, &h, init, &ChainSettings::new(10, 0, 1, 0)).unwrap_err();
        assert!(matches!(err, Error::Initialization { .. }), "{err}");
    }

    #[test]
    fn ou_linear_term_selected() {
        let (obs, h, traj) = ou_problem(4);
        let init = SSChainState::interpolated(&obs, &h, 0.0, 0.01, traj.n_steps()).unwrap();
        let out = run_spike_slab_chain(&obs, &h, init, &ChainSettings::new(20_000, 10_000, 1, 4)).unwrap();
        let g = out.inclusion.unwrap();
        let mean = |j: usize| g.column(j).iter().map(|&v| f64::from(v)).sum::<f64>() / g.nrows() as f64;
        assert!(mean(1) > 0.5, "linear term inclusion {}", mean(1));
        for j in [0, 2, 3, 4] {
            assert!(mean(j) < 0.5, "term {j} inclusion {}", mean(j));
        }
    }
}
