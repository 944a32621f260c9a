//! Linchpin versus vanilla Metropolis-Hastings on the Lorenz-96 inference
//! model, both started at the truth with equal run length.
//!
//!     cargo run --release --example ess_comparison [iterations] [seed]

use sde_select::config::{ExperimentConfig, StartMode};
use sde_select::diagnostics::{autocorrelation, compare_ess};
use sde_select::dynamics::SystemId;
use sde_select::experiment;

fn main() -> sde_select::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().and_then(|s| s.parse().ok()).unwrap_or(50_000);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut cfg = ExperimentConfig::defaults(SystemId::Lorenz96, 4).with_seed(seed);
    cfg.inference.iterations = iterations;
    cfg.inference.burn_in = iterations / 10;
    cfg.inference.thin = 1;
    cfg.inference.start = StartMode::Truth;

    let (traj, obs) = experiment::simulate(&cfg)?;
    let reduced = experiment::forced_template(&cfg, SystemId::Lorenz96)?;
    let lin = experiment::run_inference(&cfg, &obs, &reduced, Some(&traj), cfg.inference.seed)?;
    let van = experiment::run_vanilla(&cfg, &obs, &reduced, Some(&traj), cfg.inference.seed)?;

    for c in compare_ess(&lin, &van)? {
        println!(
            "{}: ESS linchpin {:.0} ({:.0}/s), vanilla {:.0} ({:.0}/s), ratio {:.2}",
            c.name, c.ess_linchpin, c.ess_per_sec_linchpin, c.ess_vanilla, c.ess_per_sec_vanilla, c.ratio
        );
    }
    let (a, b) = (
        autocorrelation(&lin.column("theta")?, 50)?,
        autocorrelation(&van.column("theta")?, 50)?,
    );
    println!("lag   linchpin  vanilla");
    for k in [1, 5, 10, 25, 50] {
        println!("{k:>3}   {:8.3} {:8.3}", a[k], b[k]);
    }
    Ok(())
}
