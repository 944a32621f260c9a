//! End-to-end pipelines: simulate, select, infer, and the noise-sensitivity
//! table for the diffusion conditional.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, StartMode};
use crate::dictionary::{encode_known_system, CoefficientMatrix, DictionaryBasis, InclusionMask};
use crate::dynamics::{
    euler_maruyama_simulate, observe, DiffusionSpec, LatentPath, ObservationSet, SystemId, SystemSpec, Trajectory,
};
use crate::error::{Error, Result};
use crate::posterior::{model_drift_path, sigma_conditional_params, InfHyperParams, SSHyperParams};
use crate::samplers::{
    run_inference_chain, run_spike_slab_chain, run_vanilla_chain, ChainOutput, ChainSettings, ComponentAcceptance,
    InfChainState, SSChainState, VanillaInit,
};
use crate::selection::{
    inclusion_probabilities, median_probability_model, posterior_mean_coefficients, reduce_system, ReducedSystem,
    SelectionReport, Tying,
};

/// Offset separating the observation-noise stream from the path stream.
const OBSERVATION_SEED_OFFSET: u64 = 0x0b5e_7a7e;

/// The simulated system of a config.
pub fn system_spec(cfg: &ExperimentConfig) -> Result<SystemSpec> {
    let s = &cfg.system;
    match s.system {
        SystemId::GenericDictionary => SystemSpec::generic(&generic_coefficients(cfg)?),
        id => SystemSpec::known(id, &s.theta),
    }
}

fn generic_coefficients(cfg: &ExperimentConfig) -> Result<CoefficientMatrix> {
    let basis = DictionaryBasis::new(cfg.system.p)?;
    let values = Array2::from_shape_vec((basis.p(), basis.p_star()), cfg.system.theta.clone())
        .map_err(|_| Error::config("system.theta", "generic dictionary needs p x p* coefficients"))?;
    CoefficientMatrix::new(values)
}

/// True coefficients and support in the dictionary.
pub fn true_encoding(cfg: &ExperimentConfig) -> Result<(CoefficientMatrix, InclusionMask)> {
    match cfg.system.system {
        SystemId::GenericDictionary => {
            let b = generic_coefficients(cfg)?;
            let mask = InclusionMask::from_nonzero(&b);
            Ok((b, mask))
        }
        id => encode_known_system(id, &cfg.system.theta),
    }
}

/// Latent path and noisy observations for a config.
pub fn simulate(cfg: &ExperimentConfig) -> Result<(Trajectory, ObservationSet)> {
    let s = &cfg.system;
    let traj = euler_maruyama_simulate(
        &system_spec(cfg)?,
        &DiffusionSpec::new(s.sigma.clone())?,
        s.x_init.as_deref(),
        s.t0,
        s.t_end,
        s.dt,
        s.burn_in,
        s.seed,
    )?;
    let obs = observe(&traj, s.obs_per_unit, &s.r, s.seed.wrapping_add(OBSERVATION_SEED_OFFSET))?;
    Ok((traj, obs))
}

fn first_observation(obs: &ObservationSet, p: usize) -> Vec<f64> {
    if obs.is_empty() {
        vec![0.0; p]
    } else {
        obs.values.row(0).to_vec()
    }
}

/// Spike-and-slab hyperparameters, with the high prior inclusion value on
/// the entries believed active (the true support).
pub fn ss_hyper(cfg: &ExperimentConfig, obs: &ObservationSet) -> Result<SSHyperParams> {
    let c = &cfg.selection;
    let p = cfg.system.p;
    let (_, pattern) = true_encoding(cfg)?;
    Ok(SSHyperParams {
        tau0: c.tau0,
        tau1: c.tau1,
        q: SSHyperParams::prior_inclusion(&pattern, c.q_active, c.q_inactive),
        alpha: c.alpha,
        beta: c.beta,
        mu0: c.mu0.clone().unwrap_or_else(|| first_observation(obs, p)),
        lambda0_sq: vec![c.lambda0_sq; p],
    })
}

pub fn inf_hyper(cfg: &ExperimentConfig, obs: &ObservationSet, m0: Vec<f64>) -> InfHyperParams {
    let c = &cfg.inference;
    let p = cfg.system.p;
    InfHyperParams {
        m0,
        s0_sq: c.s0_sq,
        alpha: c.alpha,
        beta: c.beta,
        mu0: c.mu0.clone().unwrap_or_else(|| first_observation(obs, p)),
        lambda0_sq: vec![c.lambda0_sq; p],
    }
}

fn truth_path<'a>(truth: Option<&'a Trajectory>, stage: &str) -> Result<&'a LatentPath> {
    truth.ok_or_else(|| Error::config(format!("{stage}.start"), "truth start needs the simulated latent path"))
}

/// Outcome of the selection stage.
#[derive(Debug, Clone)]
pub struct SelectionRun {
    pub output: ChainOutput,
    pub mask: InclusionMask,
    pub b_mean: CoefficientMatrix,
    pub report: SelectionReport,
}

/// Spike-and-slab chain followed by the median-probability decision.
pub fn run_selection(
    cfg: &ExperimentConfig,
    obs: &ObservationSet,
    truth: Option<&Trajectory>,
    seed: u64,
) -> Result<SelectionRun> {
    let s = &cfg.system;
    let c = &cfg.selection;
    let h = ss_hyper(cfg, obs)?;
    let (b_true, mask_true) = true_encoding(cfg)?;
    let init = match c.start {
        StartMode::Truth => SSChainState::new(truth_path(truth, "selection")?.clone(), b_true, mask_true.clone())?,
        StartMode::Interpolate => SSChainState::interpolated(obs, &h, s.t0, s.dt, s.n_steps())?,
    };
    let settings = ChainSettings::new(c.iterations, c.burn_in, c.thin, seed);
    let output = run_spike_slab_chain(obs, &h, init, &settings)?;
    let basis = DictionaryBasis::new(s.p)?;
    let median = median_probability_model(&inclusion_probabilities(&output)?, &basis)?;
    let b_mean = posterior_mean_coefficients(&output)?;
    let report = SelectionReport::new(&output, &median, &b_mean, &basis, Some(&mask_true));
    Ok(SelectionRun {
        output,
        mask: median.mask,
        b_mean,
        report,
    })
}

/// What `select` hands to `infer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// `p x p*` indicators of the median-probability model.
    pub mask: Vec<Vec<u8>>,
    pub report: SelectionReport,
    /// The reduced system under the configured tying, when non-empty.
    pub reduced: Option<ReducedSystem>,
}

impl Decision {
    pub fn new(run: &SelectionRun, template: Option<SystemId>) -> Result<Self> {
        let reduced = match run.mask.active_count() {
            0 => None,
            _ => Some(reduce_system(
                &run.mask,
                &run.b_mean,
                &DictionaryBasis::new(run.report.p)?,
                tying(template),
            )?),
        };
        Ok(Self {
            mask: run.mask.flags.rows().into_iter().map(|r| r.to_vec()).collect(),
            report: run.report.clone(),
            reduced,
        })
    }

    /// Reduced system under a (possibly different) tying.
    pub fn reduce(&self, template: Option<SystemId>) -> Result<ReducedSystem> {
        let basis = DictionaryBasis::new(self.report.p)?;
        let rows = |v: &Vec<Vec<u8>>| v.iter().flatten().copied().collect::<Vec<_>>();
        let flags = Array2::from_shape_vec((basis.p(), basis.p_star()), rows(&self.mask))
            .map_err(|_| Error::invalid("decision mask has the wrong shape"))?;
        let mean: Vec<f64> = self.report.posterior_mean.iter().flatten().copied().collect();
        let b_mean = CoefficientMatrix::new(
            Array2::from_shape_vec((basis.p(), basis.p_star()), mean)
                .map_err(|_| Error::invalid("decision posterior mean has the wrong shape"))?,
        )?;
        reduce_system(&InclusionMask::new(flags)?, &b_mean, &basis, tying(template))
    }
}

fn tying(template: Option<SystemId>) -> Tying {
    template.map_or(Tying::Untied, Tying::Template)
}

/// Reduced system forced onto a built-in template without a selection run.
pub fn forced_template(cfg: &ExperimentConfig, system: SystemId) -> Result<ReducedSystem> {
    let model = crate::dynamics::DriftModel::builtin(system)
        .ok_or_else(|| Error::config("inference.template", "not a built-in system"))?;
    if system.dimension() != Some(cfg.system.p) {
        return Err(Error::config("inference.template", "template dimension differs from the data"));
    }
    let (m0, note) = match &cfg.inference.m0 {
        Some(m) => (m.clone(), None),
        None if system == cfg.system.system => (
            cfg.system.theta.clone(),
            Some("no decision: prior mean set to the simulated parameters".to_string()),
        ),
        None => return Err(Error::config("inference.m0", "needed when a template is forced without a decision")),
    };
    if m0.len() != model.n_params() {
        return Err(Error::config("inference.m0", format!("expected {} values", model.n_params())));
    }
    Ok(ReducedSystem {
        system,
        p: cfg.system.p,
        support: Vec::new(),
        param_names: model.param_names(),
        m0,
        note,
    })
}

/// True parameter values of a reduced model, when the truth is expressible.
pub fn true_parameters(cfg: &ExperimentConfig, reduced: &ReducedSystem) -> Result<Option<Vec<f64>>> {
    if reduced.system == cfg.system.system && reduced.system != SystemId::GenericDictionary {
        return Ok(Some(cfg.system.theta.clone()));
    }
    if reduced.system != SystemId::GenericDictionary {
        return Ok(None);
    }
    let (b, _) = true_encoding(cfg)?;
    Ok(Some(reduced.support.iter().map(|&ij| b.values[ij]).collect()))
}

/// Starting state of the inference stage.
pub fn inference_start(
    cfg: &ExperimentConfig,
    obs: &ObservationSet,
    reduced: &ReducedSystem,
    truth: Option<&Trajectory>,
) -> Result<InfChainState> {
    let s = &cfg.system;
    match cfg.inference.start {
        StartMode::Truth => {
            let theta = true_parameters(cfg, reduced)?.unwrap_or_else(|| reduced.m0.clone());
            Ok(InfChainState::new(truth_path(truth, "inference")?.clone(), theta))
        }
        StartMode::Interpolate => InfChainState::interpolated(obs, reduced.m0.clone(), s.t0, s.dt, s.n_steps()),
    }
}

/// Linchpin inference chain on a reduced system.
pub fn run_inference(
    cfg: &ExperimentConfig,
    obs: &ObservationSet,
    reduced: &ReducedSystem,
    truth: Option<&Trajectory>,
    seed: u64,
) -> Result<ChainOutput> {
    let c = &cfg.inference;
    let m0 = c.m0.clone().unwrap_or_else(|| reduced.m0.clone());
    let h = inf_hyper(cfg, obs, m0);
    let init = inference_start(cfg, obs, reduced, truth)?;
    run_inference_chain(obs, &reduced.model()?, &h, init, &ChainSettings::new(c.iterations, c.burn_in, c.thin, seed))
}

/// The vanilla baseline with the same settings and start.
pub fn run_vanilla(
    cfg: &ExperimentConfig,
    obs: &ObservationSet,
    reduced: &ReducedSystem,
    truth: Option<&Trajectory>,
    seed: u64,
) -> Result<ChainOutput> {
    let c = &cfg.inference;
    let m0 = c.m0.clone().unwrap_or_else(|| reduced.m0.clone());
    let h = inf_hyper(cfg, obs, m0);
    let init = VanillaInit {
        state: inference_start(cfg, obs, reduced, truth)?,
        sigma: None,
    };
    run_vanilla_chain(obs, &reduced.model()?, &h, init, &ChainSettings::new(c.iterations, c.burn_in, c.thin, seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
    pub ess: f64,
}

/// Deterministic summary of an inference chain (no timings).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceSummary {
    pub system: SystemId,
    pub samples: usize,
    pub seed: u64,
    pub m0: Vec<f64>,
    pub truth: Option<Vec<f64>>,
    pub parameters: Vec<ParameterSummary>,
    pub acceptance: Vec<ComponentAcceptance>,
    pub note: Option<String>,
}

impl InferenceSummary {
    pub fn new(out: &ChainOutput, reduced: &ReducedSystem, m0: Vec<f64>, truth: Option<Vec<f64>>) -> Result<Self> {
        let summaries = crate::diagnostics::summarize_chain(out, &[], 0)?;
        Ok(Self {
            system: reduced.system,
            samples: out.n_samples(),
            seed: out.settings.seed,
            m0,
            truth,
            parameters: summaries
                .into_iter()
                .map(|s| ParameterSummary {
                    name: s.name,
                    mean: s.mean,
                    sd: s.sd,
                    q025: s.q025,
                    median: s.median,
                    q975: s.q975,
                    ess: s.ess,
                })
                .collect(),
            acceptance: out.acceptance.clone(),
            note: reduced.note.clone(),
        })
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.name == name).map(|p| p.mean)
    }
}

/// Long-run chain lengths, far beyond a desk run.
pub fn marathon(mut cfg: ExperimentConfig) -> ExperimentConfig {
    cfg.selection.iterations = 1_000_000;
    cfg.selection.burn_in = 100_000;
    cfg.selection.thin = 10;
    let (iterations, burn_in) = match cfg.system.system {
        SystemId::Lorenz96 => (5_000_000, 4_000_000),
        _ => (1_000_000, 100_000),
    };
    cfg.inference.iterations = iterations;
    cfg.inference.burn_in = burn_in;
    cfg.inference.thin = 10;
    cfg
}

pub const BUTTERFLY_NOISE: [f64; 5] = [1.0, 0.5, 0.1, 0.05, 0.01];
pub const BUTTERFLY_SIGMA: f64 = 0.06;

/// Reference conditional means of `Sigma` per noise level, `(x, y, z)`.
pub const BUTTERFLY_REFERENCE: [[f64; 3]; 5] = [
    [185.1, 198.9, 206.8],
    [44.2, 48.7, 47.3],
    [2.03, 2.02, 2.04],
    [0.53, 0.54, 0.52],
    [0.086, 0.084, 0.084],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ButterflyRow {
    pub noise_sd: f64,
    /// Conditional mean of each `Sigma_i`, averaged over trajectories.
    pub mean: Vec<f64>,
    pub reference: Vec<f64>,
    /// `Sigma_true + 2 s^2 / dt`.
    pub analytic: f64,
}

impl ButterflyRow {
    pub fn max_rel_error_reference(&self) -> f64 {
        max_rel(&self.mean, &self.reference)
    }

    pub fn max_rel_error_analytic(&self) -> f64 {
        max_rel(&self.mean, &vec![self.analytic; self.mean.len()])
    }
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) / y).abs()).fold(0.0, f64::max)
}

/// The config behind the noise-sensitivity table: Lorenz-63 data settings
/// with a small diffusion.
pub fn butterfly_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(SystemId::Lorenz63, 3).with_seed(seed);
    cfg.system.sigma = vec![BUTTERFLY_SIGMA; 3];
    cfg
}

/// Perturbs simulated Lorenz-63 paths with `N(0, s^2)` noise and reports the
/// mean of the `Sigma` full conditional with the true drift evaluated along
/// the perturbed path, averaged over `seeds`.
pub fn butterfly_table(seeds: &[u64]) -> Result<Vec<ButterflyRow>> {
    if seeds.is_empty() {
        return Err(Error::invalid("butterfly table needs at least one trajectory seed"));
    }
    let mut sums = vec![vec![0.0; 3]; BUTTERFLY_NOISE.len()];
    let mut dt = 0.0;
    for &seed in seeds {
        let cfg = butterfly_config(seed);
        dt = cfg.system.dt;
        let spec = system_spec(&cfg)?;
        let (traj, _) = simulate(&cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        for (row, &s) in BUTTERFLY_NOISE.iter().enumerate() {
            let noise = Normal::new(0.0, s).map_err(|e| Error::invalid(e.to_string()))?;
            let states = traj.states.mapv(|v| v + noise.sample(&mut rng));
            let noisy = LatentPath::new(traj.t0, traj.dt, states)?;
            let drift = model_drift_path(&noisy, spec.model(), spec.theta())?;
            let ig = sigma_conditional_params(&noisy, &drift, cfg.selection.alpha, cfg.selection.beta)?;
            for (acc, g) in sums[row].iter_mut().zip(&ig) {
                *acc += g.mean();
            }
        }
    }
    let k = seeds.len() as f64;
    Ok(BUTTERFLY_NOISE
        .iter()
        .zip(sums)
        .zip(BUTTERFLY_REFERENCE)
        .map(|((&s, sum), reference)| ButterflyRow {
            noise_sd: s,
            mean: sum.into_iter().map(|v| v / k).collect(),
            reference: reference.to_vec(),
            analytic: BUTTERFLY_SIGMA + 2.0 * s * s / dt,
        })
        .collect())
}

pub fn write_butterfly_csv(path: &std::path::Path, rows: &[ButterflyRow]) -> Result<()> {
    let header: Vec<String> = [
        "s", "sigma_x", "sigma_y", "sigma_z", "ref_x", "ref_y", "ref_z", "analytic",
    ]
    .iter()
    .map(|h| h.to_string())
    .collect();
    crate::io::write_table(
        path,
        &header,
        rows.iter().map(|r| {
            let mut v = vec![r.noise_sd];
            v.extend(&r.mean);
            v.extend(&r.reference);
            v.push(r.analytic);
            v
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulate_counts_follow_the_config() {
        let cfg = ExperimentConfig::defaults(SystemId::OrnsteinUhlenbeck, 1);
        let (traj, obs) = simulate(&cfg).unwrap();
        assert_eq!(traj.states.nrows(), 201);
        assert_eq!(obs.len(), 40);
        let again = simulate(&cfg).unwrap();
        assert_eq!(again.0, traj);
        assert_eq!(again.1, obs);
    }

    #[test]
    fn believed_active_entries_get_the_high_prior() {
        let cfg = ExperimentConfig::defaults(SystemId::OrnsteinUhlenbeck, 1);
        let (_, obs) = simulate(&cfg).unwrap();
        let h = ss_hyper(&cfg, &obs).unwrap();
        assert_eq!(h.q.row(0).to_vec(), vec![0.1, 0.9, 0.1, 0.1, 0.1]);
        assert_eq!(h.mu0, obs.values.row(0).to_vec());
    }

    #[test]
    fn butterfly_single_seed_is_near_the_analytic_value() {
        let rows = butterfly_table(&[3]).unwrap();
        assert!((rows[0].analytic - 200.06).abs() < 1e-9);
        for r in &rows[..3] {
            assert!(r.max_rel_error_analytic() < 0.15, "{r:?}");
        }
    }
}
