//! Linchpin MCMC samplers and their shared machinery.
//!
//! Every chain is a component-wise random-walk Metropolis-Hastings scheme:
//! the whole latent path moves as one isotropic Gaussian block, scalar
//! parameters move one at a time. Proposal scales adapt towards 23%
//! acceptance during burn-in and are frozen afterwards.

mod inference;
mod spike_slab;
mod vanilla;

pub use inference::{run_inference_chain, InfChainState};
pub use spike_slab::{gibbs_gamma_sweep, run_spike_slab_chain, SSChainState};
pub use vanilla::{run_vanilla_chain, VanillaInit};

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{LatentPath, ObservationSet};
use crate::error::{Error, Result};
use crate::io;
use crate::posterior::{log_initial_prior, observation_loglik_at, sample_sigma, InvGammaParams};

pub const TARGET_ACCEPTANCE: f64 = 0.23;
pub const DEFAULT_KAPPA: f64 = 1.0;
pub const DEFAULT_WINDOW: usize = 1000;

/// Random-walk step sizes for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalScales {
    /// Isotropic step for the latent-path block.
    pub x: f64,
    /// One step per scalar component, in update order.
    pub params: Vec<f64>,
    pub window: usize,
    pub target: f64,
    pub kappa: f64,
}

impl ProposalScales {
    pub fn new(x: f64, params: Vec<f64>) -> Self {
        Self {
            x,
            params,
            window: DEFAULT_WINDOW,
            target: TARGET_ACCEPTANCE,
            kappa: DEFAULT_KAPPA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x > 0.0) || self.params.iter().any(|&s| !(s > 0.0)) || self.window == 0 {
            return Err(Error::invalid("proposal scales must be positive with a non-empty window"));
        }
        Ok(())
    }
}

/// Accepted / proposed counts for every MH component over one window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AcceptanceWindow {
    pub x: (u64, u64),
    pub params: Vec<(u64, u64)>,
}

impl AcceptanceWindow {
    pub fn new(n_params: usize) -> Self {
        Self {
            x: (0, 0),
            params: vec![(0, 0); n_params],
        }
    }

    pub(crate) fn record_x(&mut self, accepted: bool) {
        self.x.0 += u64::from(accepted);
        self.x.1 += 1;
    }

    pub(crate) fn record_param(&mut self, k: usize, accepted: bool) {
        self.params[k].0 += u64::from(accepted);
        self.params[k].1 += 1;
    }

    fn reset(&mut self) {
        self.x = (0, 0);
        self.params.iter_mut().for_each(|c| *c = (0, 0));
    }
}

fn rate((acc, prop): (u64, u64)) -> Option<f64> {
    (prop > 0).then(|| acc as f64 / prop as f64)
}

/// Multiplies each scale by `exp(kappa * (rate - target))` for the window's
/// empirical acceptance rate; untouched components keep their scale.
pub fn adapt_proposal_scales(history: &AcceptanceWindow, scales: &ProposalScales) -> ProposalScales {
    let step = |s: f64, counts| match rate(counts) {
        Some(r) => s * (scales.kappa * (r - scales.target)).exp(),
        None => s,
    };
    ProposalScales {
        x: step(scales.x, history.x),
        params: scales
            .params
            .iter()
            .zip(&history.params)
            .map(|(&s, &c)| step(s, c))
            .collect(),
        ..scales.clone()
    }
}

/// Burn-in adaptation schedule plus post-burn-in acceptance totals: scales
/// adapt at the end of each full window and freeze once burn-in is over.
pub(crate) struct Adapter {
    window: AcceptanceWindow,
    totals: AcceptanceWindow,
    burn_in: usize,
}

impl Adapter {
    pub(crate) fn new(n_params: usize, burn_in: usize) -> Self {
        Self {
            window: AcceptanceWindow::new(n_params),
            totals: AcceptanceWindow::new(n_params),
            burn_in,
        }
    }

    fn slot(&mut self, iter: usize) -> &mut AcceptanceWindow {
        if iter < self.burn_in {
            &mut self.window
        } else {
            &mut self.totals
        }
    }

    pub(crate) fn record_x(&mut self, iter: usize, accepted: bool) {
        self.slot(iter).record_x(accepted);
    }

    pub(crate) fn record_param(&mut self, iter: usize, k: usize, accepted: bool) {
        self.slot(iter).record_param(k, accepted);
    }

    pub(crate) fn totals(&self) -> &AcceptanceWindow {
        &self.totals
    }

    /// Call after iteration `iter` (0-based) completes.
    pub(crate) fn end_iteration(&mut self, iter: usize, scales: &mut ProposalScales) {
        if iter >= self.burn_in {
            return;
        }
        let done = iter + 1;
        if done % scales.window == 0 || done == self.burn_in {
            *scales = adapt_proposal_scales(&self.window, scales);
            self.window.reset();
        }
    }
}

/// One Metropolis accept/reject decision. NaN and `-inf` ratios reject.
pub fn metropolis_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    if log_ratio >= 0.0 {
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

#[derive(Debug, Clone, PartialEq)]
pub struct RwmhStep {
    pub value: Vec<f64>,
    pub log_density: f64,
    pub accepted: bool,
}

/// Gaussian random-walk MH step on `current` (a scalar or a block).
///
/// Non-finite proposal densities count as `-inf` and are rejected.
pub fn rwmh_update<R, F>(current: &[f64], current_log: f64, mut log_target: F, scale: f64, rng: &mut R) -> RwmhStep
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> f64,
{
    assert!(scale > 0.0, "proposal scale must be positive");
    let proposal: Vec<f64> = current
        .iter()
        .map(|&c| c + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut log_prop = log_target(&proposal);
    if !log_prop.is_finite() {
        log_prop = f64::NEG_INFINITY;
    }
    if metropolis_accept(log_prop - current_log, rng) {
        RwmhStep {
            value: proposal,
            log_density: log_prop,
            accepted: true,
        }
    } else {
        RwmhStep {
            value: current.to_vec(),
            log_density: current_log,
            accepted: false,
        }
    }
}

/// Starting path by linear interpolation of the observations onto the grid
/// `t0 + k*dt`, held constant before the first and after the last one.
pub fn interpolate_start(obs: &ObservationSet, t0: f64, dt: f64, n_steps: usize) -> Result<LatentPath> {
    if obs.is_empty() {
        return Err(Error::invalid("interpolation needs at least one observation"));
    }
    let p = obs.dimension();
    let k = obs.len();
    let mut states = Array2::zeros((n_steps + 1, p));
    let mut seg = 0;
    for g in 0..=n_steps {
        let t = t0 + g as f64 * dt;
        let row = if t <= obs.times[0] {
            obs.values.row(0).to_vec()
        } else if t >= obs.times[k - 1] {
            obs.values.row(k - 1).to_vec()
        } else {
            while obs.times[seg + 1] < t {
                seg += 1;
            }
            let (ta, tb) = (obs.times[seg], obs.times[seg + 1]);
            let w = (t - ta) / (tb - ta);
            (0..p)
                .map(|i| (1.0 - w) * obs.values[[seg, i]] + w * obs.values[[seg + 1, i]])
                .collect()
        };
        for i in 0..p {
            states[[g, i]] = row[i];
        }
    }
    LatentPath::new(t0, dt, states)
}

/// Length, burn-in, thinning and seeding of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Keep every recorded latent path, not only their running mean.
    pub record_latent: bool,
    /// Starting scales; derived from local curvature when absent.
    pub initial_scales: Option<ProposalScales>,
}

impl ChainSettings {
    pub fn new(iterations: usize, burn_in: usize, thin: usize, seed: u64) -> Self {
        Self {
            iterations,
            burn_in,
            thin,
            seed,
            record_latent: false,
            initial_scales: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        if self.iterations < self.burn_in {
            return Err(Error::invalid("iterations must be at least burn_in"));
        }
        if let Some(s) = &self.initial_scales {
            s.validate()?;
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    /// Whether 0-based iteration `iter` is recorded.
    pub(crate) fn records(&self, iter: usize) -> bool {
        iter >= self.burn_in && (iter - self.burn_in + 1) % self.thin == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainKind {
    SpikeSlab,
    Inference,
    Vanilla,
}

/// Post-burn-in acceptance bookkeeping for one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentAcceptance {
    pub name: String,
    pub accepted: u64,
    pub proposed: u64,
    pub rate: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub kind: ChainKind,
    /// Names of the recorded scalar parameters, e.g. `B[2,5]` or `theta`.
    pub param_names: Vec<String>,
    /// `draws x params`; dictionary coefficients are flattened column-major.
    pub params: Array2<f64>,
    /// `(rows, cols)` of the coefficient matrix for spike-and-slab chains.
    pub coefficient_shape: Option<(usize, usize)>,
    /// `draws x (p * p*)` indicators, column-major, spike-and-slab only.
    pub inclusion: Option<Array2<u8>>,
    /// `draws x p` diffusion draws.
    pub sigma: Array2<f64>,
    /// `draws x p` inverse-gamma rates of the Sigma full conditional.
    pub sigma_rates: Array2<f64>,
    pub sigma_shape: f64,
    /// Mean of the recorded latent paths.
    pub latent_mean: Array2<f64>,
    pub latent_draws: Vec<Array2<f64>>,
    pub final_path: LatentPath,
    pub acceptance: Vec<ComponentAcceptance>,
    pub scales: ProposalScales,
    pub settings: ChainSettings,
    pub elapsed_secs: f64,
}

impl ChainOutput {
    pub fn n_samples(&self) -> usize {
        self.params.nrows()
    }

    pub fn p(&self) -> usize {
        self.sigma.ncols()
    }

    pub fn sigma_names(&self) -> Vec<String> {
        (1..=self.p()).map(|i| format!("Sigma[{i}]")).collect()
    }

    pub fn inclusion_names(&self) -> Vec<String> {
        match self.coefficient_shape {
            Some((rows, cols)) if self.inclusion.is_some() => (0..cols)
                .flat_map(|j| (0..rows).map(move |i| format!("gamma[{},{}]", i + 1, j + 1)))
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Every scalar column, in CSV order.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = self.param_names.clone();
        names.extend(self.inclusion_names());
        names.extend(self.sigma_names());
        names
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        if let Some(k) = self.param_names.iter().position(|n| n == name) {
            return Ok(self.params.column(k).to_vec());
        }
        if let (Some(k), Some(g)) = (self.inclusion_names().iter().position(|n| n == name), &self.inclusion) {
            return Ok(g.column(k).iter().map(|&v| f64::from(v)).collect());
        }
        if let Some(k) = self.sigma_names().iter().position(|n| n == name) {
            return Ok(self.sigma.column(k).to_vec());
        }
        Err(Error::UnknownParameter {
            name: name.to_string(),
            available: self.column_names().join(", "),
        })
    }

    /// One row per recorded draw with every scalar column.
    pub fn write_samples_csv(&self, path: &Path) -> Result<()> {
        let header = self.column_names();
        let rows = (0..self.n_samples()).map(|r| {
            let mut row = self.params.row(r).to_vec();
            if let Some(g) = &self.inclusion {
                row.extend(g.row(r).iter().map(|&v| f64::from(v)));
            }
            row.extend(self.sigma.row(r).iter());
            row
        });
        io::write_table(path, &header, rows)
    }

    pub fn write_sigma_csv(&self, path: &Path) -> Result<()> {
        io::write_table(
            path,
            &self.sigma_names(),
            self.sigma.rows().into_iter().map(|r| r.to_vec()),
        )
    }

    /// Per-component acceptance as JSON.
    pub fn acceptance_report(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind,
            "iterations": self.settings.iterations,
            "burn_in": self.settings.burn_in,
            "thin": self.settings.thin,
            "seed": self.settings.seed,
            "samples": self.n_samples(),
            "components": self.acceptance,
        })
    }
}

/// Accumulates the recorded draws of one chain.
pub(crate) struct Recorder {
    params: Vec<f64>,
    inclusion: Vec<u8>,
    rates: Vec<f64>,
    latent_sum: Array2<f64>,
    latent_draws: Vec<Array2<f64>>,
    keep_latent: bool,
    count: usize,
}

impl Recorder {
    pub(crate) fn new(path_shape: (usize, usize), keep_latent: bool) -> Self {
        Self {
            params: Vec::new(),
            inclusion: Vec::new(),
            rates: Vec::new(),
            latent_sum: Array2::zeros(path_shape),
            latent_draws: Vec::new(),
            keep_latent,
            count: 0,
        }
    }

    pub(crate) fn push(&mut self, params: &[f64], inclusion: Option<&[u8]>, rates: &[f64], path: &Array2<f64>) {
        self.params.extend_from_slice(params);
        if let Some(g) = inclusion {
            self.inclusion.extend_from_slice(g);
        }
        self.rates.extend_from_slice(rates);
        self.latent_sum += path;
        if self.keep_latent {
            self.latent_draws.push(path.clone());
        }
        self.count += 1;
    }

    pub(crate) fn count(&self) -> usize {
        self.count
    }

    pub(crate) fn finish(self, n_params: usize, n_incl: usize, p: usize) -> RecordedDraws {
        let n = self.count;
        let latent_mean = if n > 0 { self.latent_sum / n as f64 } else { self.latent_sum };
        RecordedDraws {
            params: Array2::from_shape_vec((n, n_params), self.params).expect("param rows"),
            inclusion: (n_incl > 0)
                .then(|| Array2::from_shape_vec((n, n_incl), self.inclusion).expect("gamma rows")),
            rates: Array2::from_shape_vec((n, p), self.rates).expect("rate rows"),
            latent_mean,
            latent_draws: self.latent_draws,
        }
    }
}

pub(crate) struct RecordedDraws {
    pub params: Array2<f64>,
    pub inclusion: Option<Array2<u8>>,
    pub rates: Array2<f64>,
    pub latent_mean: Array2<f64>,
    pub latent_draws: Vec<Array2<f64>>,
}

/// Isotropic block step giving roughly 23% acceptance on a Gaussian with
/// the given precision trace.
pub(crate) fn block_scale_from_trace(trace: f64) -> f64 {
    if trace.is_finite() && trace > 0.0 {
        2.38 / trace.sqrt()
    } else {
        1e-3
    }
}

/// Scalar step from the negative second derivative of a log density.
pub(crate) fn scalar_scale_from_curvature(curvature: f64, fallback: f64) -> f64 {
    if curvature.is_finite() && curvature > 0.0 {
        2.38 / curvature.sqrt()
    } else {
        fallback
    }
}

/// Fills `buf` with `current + scale * z`, `z` standard normal.
pub(crate) fn propose_block<R: Rng + ?Sized>(current: &[f64], scale: f64, rng: &mut R, buf: &mut [f64]) {
    for (b, &c) in buf.iter_mut().zip(current) {
        *b = c + scale * rng.sample::<f64, _>(StandardNormal);
    }
}

/// Trace of the approximate precision of the latent path given per-component
/// diffusion levels `sigma`.
pub(crate) fn path_precision_trace(n: usize, dt: f64, sigma: &[f64], lambda0_sq: &[f64], obs: &ObservationSet) -> f64 {
    sigma
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            2.0 * n as f64 / (s * dt) + 1.0 / lambda0_sq[i] + obs.len() as f64 / obs.r_diag[i]
        })
        .sum()
}

pub(crate) fn acceptance_entry(name: String, counts: (u64, u64), scale: f64) -> ComponentAcceptance {
    ComponentAcceptance {
        name,
        accepted: counts.0,
        proposed: counts.1,
        rate: rate(counts).unwrap_or(0.0),
        scale,
    }
}

/// Observation likelihood plus the `X_0` prior.
pub(crate) fn path_log_terms(path: &LatentPath, obs: &ObservationSet, idx: &[usize], mu0: &[f64], lambda0_sq: &[f64]) -> f64 {
    let x0 = path.states.row(0).to_vec();
    observation_loglik_at(path, obs, idx) + log_initial_prior(&x0, mu0, lambda0_sq)
}

/// Inverse-gamma draws of `Sigma` for each recorded rate row, on a stream of
/// the chain seed that the sampler itself never touches.
pub(crate) fn complete_sigma(rates: &Array2<f64>, shape: f64, seed: u64) -> Result<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut out = Array2::zeros(rates.dim());
    for (r, row) in rates.outer_iter().enumerate() {
        let params: Vec<InvGammaParams> = row.iter().map(|&rate| InvGammaParams { shape, rate }).collect();
        let draw = sample_sigma(&params, &mut rng)?;
        for (i, s) in draw.sigma_diag.into_iter().enumerate() {
            out[[r, i]] = s;
        }
    }
    Ok(out)
}
