//! The collapsed (Sigma-integrated) log density and the Sigma full
//! conditional along a simulated Lorenz-63 path.
//!
//!     cargo run --release --example linchpin_density

use sde_select::config::ExperimentConfig;
use sde_select::dictionary::encode_known_system;
use sde_select::dynamics::SystemId;
use sde_select::experiment;
use sde_select::posterior::{dictionary_drift_path, log_linchpin_ss, sigma_conditional_params};

fn main() -> sde_select::error::Result<()> {
    let cfg = ExperimentConfig::defaults(SystemId::Lorenz63, 3);
    let (traj, obs) = experiment::simulate(&cfg)?;
    let h = experiment::ss_hyper(&cfg, &obs)?;
    let (b, gamma) = encode_known_system(SystemId::Lorenz63, &cfg.system.theta)?;

    let at_truth = log_linchpin_ss(&traj, &b, &gamma, &obs, &h)?;
    println!("log density at the truth: {at_truth:.2}");
    for delta in [-0.5, -0.1, 0.1, 0.5] {
        let mut bb = b.clone();
        bb.values[[1, 1]] += delta; // rho
        let v = log_linchpin_ss(&traj, &bb, &gamma, &obs, &h)?;
        println!("  rho {:+.1}: {:+10.2}", delta, v - at_truth);
    }

    let drift = dictionary_drift_path(&traj, &b)?;
    println!("\nSigma | X, B (true Sigma = {:?}):", cfg.system.sigma);
    for (i, ig) in sigma_conditional_params(&traj, &drift, h.alpha, h.beta)?.iter().enumerate() {
        println!("  Sigma[{}] ~ IG({:.1}, {:.2}), mean {:.4}", i + 1, ig.shape, ig.rate, ig.mean());
    }
    Ok(())
}
