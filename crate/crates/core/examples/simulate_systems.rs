//! Simulates the three built-in systems at their default data settings and
//! writes latent paths and observations under `out/examples/`.
//!
//!     cargo run --release --example simulate_systems

use std::path::PathBuf;

use sde_select::config::ExperimentConfig;
use sde_select::dynamics::SystemId;
use sde_select::experiment;

fn main() -> sde_select::error::Result<()> {
    let root = PathBuf::from("out/examples/simulate");
    for id in [SystemId::Lorenz96, SystemId::Lorenz63, SystemId::OrnsteinUhlenbeck] {
        let cfg = ExperimentConfig::defaults(id, 0);
        let (traj, obs) = experiment::simulate(&cfg)?;
        let dir = root.join(id.label().to_ascii_lowercase());
        std::fs::create_dir_all(&dir).map_err(|e| sde_select::error::Error::Io { path: dir.clone(), source: e })?;
        traj.write_csv(&dir.join("latent.csv"))?;
        obs.write_csv(&dir.join("observations.csv"))?;
        let last = traj.state(traj.n_steps());
        println!(
            "{:>3}: p = {}, {} Euler steps, {} observations, X(t_end) = {:.3?}",
            id.label(),
            traj.dimension(),
            traj.n_steps(),
            obs.len(),
            last.to_vec()
        );
    }
    println!("written under {}", root.display());
    Ok(())
}
