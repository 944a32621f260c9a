//! Config file to posterior summaries in one process: simulate, select,
//! reduce, infer, diagnose. Pass any shipped config; the OU desk config by
//! default.
//!
//!     cargo run --release --example full_pipeline -- crates/core/configs/ou_desk.cfg

use std::path::PathBuf;

use sde_select::config::ExperimentConfig;
use sde_select::experiment::{self, Decision, InferenceSummary};

fn main() -> sde_select::error::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/ou_desk.cfg"));
    let cfg = ExperimentConfig::load(&path)?;
    println!("{}: {} over [{}, {}]", path.display(), cfg.system.system.label(), cfg.system.t0, cfg.system.t_end);

    let (traj, obs) = experiment::simulate(&cfg)?;
    let run = experiment::run_selection(&cfg, &obs, Some(&traj), cfg.selection.seed)?;
    for w in &run.report.warnings {
        println!("warning: {w}");
    }
    let decision = Decision::new(&run, cfg.inference.template)?;
    let Some(reduced) = decision.reduced else {
        println!("no term selected; stopping before inference");
        return Ok(());
    };
    println!("selected {:?}; inference model {:?}", run.report.selected_indices, reduced.system);

    let out = experiment::run_inference(&cfg, &obs, &reduced, Some(&traj), cfg.inference.seed)?;
    let truth = experiment::true_parameters(&cfg, &reduced)?;
    let summary = InferenceSummary::new(&out, &reduced, reduced.m0.clone(), truth)?;
    for p in &summary.parameters {
        println!("  {:<10} mean {:9.4}  sd {:8.4}  ESS {:6.0}", p.name, p.mean, p.sd, p.ess);
    }
    println!("took {:.1}s", out.elapsed_secs + run.output.elapsed_secs);
    Ok(())
}
