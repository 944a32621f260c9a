//! Sampler behaviour on the shipped configurations: exact oracles, chain
//! health and the Sigma completion step.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use sde_select::config::{ExperimentConfig, StartMode};
use sde_select::diagnostics::{autocorrelation, effective_sample_size};
use sde_select::dynamics::{DriftModel, LatentPath, ObservationSet, SystemId};
use sde_select::experiment;
use sde_select::posterior::InfHyperParams;
use sde_select::samplers::{
    run_inference_chain, run_vanilla_chain, ChainOutput, ChainSettings, InfChainState, VanillaInit,
};

fn shipped(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    ExperimentConfig::load(&path).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// Monte-Carlo standard error of a chain mean, from its ESS.
fn mc_se(v: &[f64]) -> f64 {
    sd(v) / effective_sample_size(v).unwrap().sqrt()
}

/// Exact posterior means of `(theta, Sigma)` for the Euler-discretised OU
/// model: Kalman-filter likelihood on a grid, with the same priors.
fn ou_exact_means(obs: &ObservationSet, h: &InfHyperParams, dt: f64, n_steps: usize) -> (f64, f64) {
    let idx = obs.grid_indices(0.0, dt, n_steps).unwrap();
    let r = obs.r_diag[0];
    let mut cells = Vec::new();
    for a in 0..600 {
        let theta = -4.0 + a as f64 * 0.02;
        for b in 0..400 {
            let u = -3.0 + b as f64 * 0.01;
            let sigma = u.exp();
            let (mut m, mut v, mut ll, mut next) = (h.mu0[0], h.lambda0_sq[0], 0.0, 0);
            for k in 0..=n_steps {
                if next < idx.len() && idx[next] == k {
                    let y = obs.values[[next, 0]];
                    let s = v + r;
                    ll -= 0.5 * ((2.0 * std::f64::consts::PI * s).ln() + (y - m).powi(2) / s);
                    let gain = v / s;
                    m += gain * (y - m);
                    v *= 1.0 - gain;
                    next += 1;
                }
                let phi = 1.0 - theta * dt;
                m *= phi;
                v = phi * phi * v + sigma * dt;
            }
            let prior = -0.5 * (theta - h.m0[0]).powi(2) / h.s0_sq - (h.alpha + 1.0) * u - h.beta / sigma;
            cells.push((theta, sigma, ll + prior + u));
        }
    }
    let top = cells.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    let (mut w, mut wt, mut ws) = (0.0, 0.0, 0.0);
    for (t, s, lp) in cells {
        let e = (lp - top).exp();
        w += e;
        wt += e * t;
        ws += e * s;
    }
    (wt / w, ws / w)
}

fn ou_inference(seed: u64, iterations: usize) -> (ExperimentConfig, ObservationSet, InfHyperParams, ChainOutput) {
    let mut cfg = shipped("ou.cfg").with_seed(seed);
    cfg.inference.iterations = iterations;
    cfg.inference.burn_in = cfg.inference.burn_in.min(iterations / 10);
    let (_, obs) = experiment::simulate(&cfg).unwrap();
    let reduced = experiment::forced_template(&cfg, SystemId::OrnsteinUhlenbeck).unwrap();
    let h = experiment::inf_hyper(&cfg, &obs, reduced.m0.clone());
    let out = experiment::run_inference(&cfg, &obs, &reduced, None, cfg.inference.seed).unwrap();
    (cfg, obs, h, out)
}

#[test]
fn ou_inference_matches_the_kalman_oracle() {
    let (cfg, obs, h, out) = ou_inference(1, 1_000_000);
    let (theta, sigma) = ou_exact_means(&obs, &h, cfg.system.dt, cfg.system.n_steps());
    let th = out.column("theta").unwrap();
    let sg = out.column("Sigma[1]").unwrap();
    let (zt, zs) = ((mean(&th) - theta) / mc_se(&th), (mean(&sg) - sigma) / mc_se(&sg));
    println!("theta {:.4} vs exact {theta:.4} (z {zt:.2}); Sigma {:.4} vs {sigma:.4} (z {zs:.2})", mean(&th), mean(&sg));
    assert!(zt.abs() < 4.0 && zs.abs() < 4.0);
}

/// The recovery check for the OU inference stage at the shipped
/// seed: posterior means near the generating values.
#[test]
fn ou_inference_recovers_the_generating_values() {
    let (_, _, _, out) = ou_inference(1, 1_000_000);
    let th = mean(&out.column("theta").unwrap());
    let sg = mean(&out.column("Sigma[1]").unwrap());
    println!("posterior means: theta {th:.4}, Sigma {sg:.4}");
    assert!((th - 2.0).abs() <= 0.25 * 2.0, "theta mean {th}");
    assert!((sg - 1.0).abs() <= 0.5, "Sigma mean {sg}");
}

#[test]
fn sigma_completion_is_no_more_correlated_than_its_rate() {
    let (_, _, _, out) = ou_inference(2, 200_000);
    let draws = out.column("Sigma[1]").unwrap();
    let rates = out.sigma_rates.column(0).to_vec();
    let (a, b) = (autocorrelation(&draws, 1).unwrap()[1], autocorrelation(&rates, 1).unwrap()[1]);
    println!("lag-1 ACF: Sigma draws {a:.3}, rates {b:.3}");
    assert!(a <= b);
}

#[test]
fn vanilla_and_linchpin_agree_on_a_tiny_instance() {
    let dt = 0.1;
    let obs = ObservationSet::new(
        vec![0.2, 0.4, 0.6, 0.8, 1.0],
        Array2::from_shape_vec((5, 1), vec![0.9, 0.5, 0.45, 0.1, 0.2]).unwrap(),
        vec![0.05],
    )
    .unwrap();
    let h = InfHyperParams {
        m0: vec![1.0],
        s0_sq: 1.0,
        alpha: 3.0,
        beta: 2.0,
        mu0: vec![1.0],
        lambda0_sq: vec![0.25],
    };
    let init = InfChainState::interpolated(&obs, vec![1.0], 0.0, dt, 10).unwrap();
    let settings = ChainSettings::new(1_000_000, 50_000, 5, 7);
    let model = DriftModel::OrnsteinUhlenbeck;
    let lin = run_inference_chain(&obs, &model, &h, init.clone(), &settings).unwrap();
    let van = run_vanilla_chain(&obs, &model, &h, VanillaInit { state: init, sigma: None }, &settings).unwrap();
    let (a, b) = (lin.column("theta").unwrap(), van.column("theta").unwrap());
    let z = (mean(&a) - mean(&b)) / (mc_se(&a).powi(2) + mc_se(&b).powi(2)).sqrt();
    println!("theta: linchpin {:.4}, vanilla {:.4}, z {z:.2}", mean(&a), mean(&b));
    assert!(z.abs() < 3.0);
}

fn assert_healthy(label: &str, out: &ChainOutput) {
    for c in &out.acceptance {
        assert!(
            (0.10..=0.45).contains(&c.rate),
            "{label}: {} acceptance {:.3} outside [0.10, 0.45]",
            c.name,
            c.rate
        );
    }
}

/// Post-adaptation acceptance on each shipped data configuration.
#[test]
fn acceptance_rates_are_healthy_on_every_configuration() {
    for (name, id) in [
        ("ou.cfg", SystemId::OrnsteinUhlenbeck),
        ("l63.cfg", SystemId::Lorenz63),
        ("l96.cfg", SystemId::Lorenz96),
    ] {
        let mut cfg = shipped(name);
        cfg.selection.iterations = 20_000;
        cfg.selection.burn_in = 10_000;
        cfg.inference.iterations = 20_000;
        cfg.inference.burn_in = 10_000;
        cfg.inference.start = StartMode::Truth;
        let (traj, obs) = experiment::simulate(&cfg).unwrap();
        let sel = experiment::run_selection(&cfg, &obs, Some(&traj), cfg.selection.seed).unwrap();
        assert_healthy(&format!("{name} selection"), &sel.output);
        let reduced = experiment::forced_template(&cfg, id).unwrap();
        let inf = experiment::run_inference(&cfg, &obs, &reduced, Some(&traj), cfg.inference.seed).unwrap();
        assert_healthy(&format!("{name} inference"), &inf);
        let van = experiment::run_vanilla(&cfg, &obs, &reduced, Some(&traj), cfg.inference.seed).unwrap();
        assert_healthy(&format!("{name} vanilla"), &van);
    }
}

#[test]
fn no_draws_after_burn_in_gives_empty_output() {
    let path = LatentPath::new(0.0, 0.1, Array2::zeros((4, 1))).unwrap();
    let h = InfHyperParams {
        m0: vec![1.0],
        s0_sq: 1.0,
        alpha: 2.0,
        beta: 1.0,
        mu0: vec![0.0],
        lambda0_sq: vec![1.0],
    };
    let out = run_inference_chain(
        &ObservationSet::unobserved(1),
        &DriftModel::OrnsteinUhlenbeck,
        &h,
        InfChainState::new(path, vec![1.0]),
        &ChainSettings::new(500, 500, 1, 3),
    )
    .unwrap();
    assert_eq!(out.n_samples(), 0);
    assert_eq!(out.param_names, vec!["theta".to_string()]);
    assert_eq!(out.settings.iterations, 500);
}

#[test]
fn chain_csv_round_trips_through_the_reader() {
    let (_, _, _, out) = ou_inference(3, 20_000);
    let dir = tempfile::tempdir().unwrap();
    let path: &Path = &dir.path().join("chain.csv");
    out.write_samples_csv(path).unwrap();
    let table = sde_select::io::read_table(path).unwrap();
    assert_eq!(table.header, out.column_names());
    assert_eq!(table.column("theta").unwrap(), out.column("theta").unwrap());
}
