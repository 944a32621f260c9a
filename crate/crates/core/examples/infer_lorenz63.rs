//! Two-stage Lorenz-63 run: selection from the true path, collapse onto the
//! three-parameter template, then inference with Sigma completed per draw.
//!
//!     cargo run --release --example infer_lorenz63 [inference iterations]

use sde_select::config::{ExperimentConfig, StartMode};
use sde_select::diagnostics::summarize_chain;
use sde_select::dynamics::SystemId;
use sde_select::experiment::{self, Decision};

fn main() -> sde_select::error::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50_000);
    let mut cfg = ExperimentConfig::defaults(SystemId::Lorenz63, 3);
    cfg.selection.iterations = 20_000;
    cfg.selection.burn_in = 5_000;
    cfg.selection.start = StartMode::Truth;
    cfg.inference.iterations = iterations;
    cfg.inference.burn_in = iterations / 10;
    cfg.inference.start = StartMode::Truth;

    let (traj, obs) = experiment::simulate(&cfg)?;
    let run = experiment::run_selection(&cfg, &obs, Some(&traj), cfg.selection.seed)?;
    println!("selected {:?} (matches truth: {:?})", run.report.selected_indices, run.report.matches_truth);
    let reduced = Decision::new(&run, Some(SystemId::Lorenz63))?.reduce(Some(SystemId::Lorenz63))?;
    println!("reduced to {:?} with prior means {:.3?}", reduced.system, reduced.m0);

    let out = experiment::run_inference(&cfg, &obs, &reduced, Some(&traj), cfg.inference.seed)?;
    for s in summarize_chain(&out, &[], 50)? {
        println!("  {:<9} {:9.4}  95% [{:.4}, {:.4}]  ESS {:.0}", s.name, s.mean, s.q025, s.q975, s.ess);
    }
    Ok(())
}
