//! Spike-and-slab identification of the Ornstein-Uhlenbeck drift from 40
//! noisy observations, starting from the interpolated data.
//!
//!     cargo run --release --example identify_ou [iterations]

use sde_select::config::ExperimentConfig;
use sde_select::dynamics::SystemId;
use sde_select::experiment;

fn main() -> sde_select::error::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let mut cfg = ExperimentConfig::defaults(SystemId::OrnsteinUhlenbeck, 1);
    cfg.selection.iterations = iterations;
    cfg.selection.burn_in = iterations / 5;
    let (_, obs) = experiment::simulate(&cfg)?;
    let run = experiment::run_selection(&cfg, &obs, None, cfg.selection.seed)?;

    println!("{} recorded draws", run.report.samples);
    for (term, (q, b)) in run.report.terms.iter().zip(
        run.report.inclusion_probabilities[0]
            .iter()
            .zip(&run.report.posterior_mean[0]),
    ) {
        println!("  {term:<5} P(gamma = 1) = {q:.3}   E[B] = {b:+.3}");
    }
    println!("selected column-major indices: {:?}", run.report.selected_indices);
    for a in &run.output.acceptance {
        println!("  acceptance {:<8} {:.3}", a.name, a.rate);
    }
    Ok(())
}
