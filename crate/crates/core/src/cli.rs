//! Command-line driver. `sde-select <verb>` with verbs `simulate`, `select`,
//! `infer` and `diagnose`; every verb writes a `manifest.json` holding the
//! resolved config, which can be fed back as `--config`.
//!
//! Layout under the output directory:
//!
//! ```text
//! <out>/latent.csv, observations.csv, manifest.json     simulate
//! <out>/select/{gamma_probs,decision}.json, ss_chain.csv
//! <out>/infer/inf_chain.csv, sigma_draws.csv, summary.json
//! <out>/diagnose/summary.json, acf.csv, density.csv, butterfly_table.csv
//! ```
//!
//! With `--chains k > 1` each chain writes into `chain_<i>/` of its stage
//! directory, seeded `seed + i`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{parse_template_hint, ExperimentConfig, StartMode};
use crate::diagnostics::{
    effective_sample_size, summarize_series, write_acf_csv, write_density_csv, ChainSummary, DEFAULT_MAX_LAG,
};
use crate::dictionary::DictionaryBasis;
use crate::dynamics::{ObservationSet, SystemId, Trajectory};
use crate::error::{Error, Result};
use crate::experiment::{self, Decision, InferenceSummary};
use crate::io;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_SELECT: u8 = 3;
pub const EXIT_INFER: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "sde-select", version, about = "Equation selection and inference for sparsely observed SDEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// INI config, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; stages use seed, seed+1 and seed+2.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding `[output] dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Validate the config, print it with defaults filled in, run nothing.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Independent chains to run concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    pub chains: usize,
    /// Full-length reference chains (hours; not for CI).
    #[arg(long, global = true)]
    pub marathon: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a latent path and noisy observations.
    Simulate,
    /// Spike-and-slab selection over the quadratic dictionary.
    Select {
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Latent path for a truth start (default `<out>/latent.csv`).
        #[arg(long)]
        latent: Option<PathBuf>,
        /// Template recorded in the decision (`L63`, `L96`, `OU`, `none`).
        #[arg(long)]
        template: Option<String>,
    },
    /// Inference on the selected model, with Sigma completed afterwards.
    Infer {
        #[arg(long)]
        observations: Option<PathBuf>,
        #[arg(long)]
        latent: Option<PathBuf>,
        #[arg(long)]
        decision: Option<PathBuf>,
        /// Collapse the selected support onto a built-in model; without a
        /// decision file this forces that model.
        #[arg(long)]
        template: Option<String>,
        /// Also run the vanilla sampler (Sigma in the state) for comparison.
        #[arg(long)]
        vanilla: bool,
    },
    /// Summaries, autocorrelations and densities of chain files.
    Diagnose {
        /// Chain CSVs (default `<out>/infer/inf_chain.csv`).
        #[arg(long = "chain", id = "chain_files")]
        chain_files: Vec<PathBuf>,
        /// Columns to summarise; all non-indicator columns when empty.
        #[arg(long, value_delimiter = ',')]
        params: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_MAX_LAG)]
        max_lag: usize,
        /// Regenerate the noise-sensitivity table of the Sigma conditional.
        #[arg(long)]
        butterfly: bool,
        #[arg(long, default_value_t = 5)]
        butterfly_seeds: u64,
        /// Compare ESS of two chain files: linchpin first, vanilla second.
        #[arg(long, num_args = 2, value_names = ["LINCHPIN", "VANILLA"])]
        compare: Option<Vec<PathBuf>>,
    },
}

/// A failure and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: Error,
}

fn stage(code: u8) -> impl Fn(Error) -> Failure {
    move |error| Failure {
        code: match &error {
            Error::Config { .. } | Error::UnknownParameter { .. } => EXIT_CONFIG,
            Error::Io { .. } | Error::Format { .. } => EXIT_IO,
            _ => code,
        },
        error,
    }
}

/// Runs one command and returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("sde-select: {}", f.error);
            f.code
        }
    }
}

fn dispatch(cli: &Cli) -> std::result::Result<(), Failure> {
    let g = &cli.global;
    if g.chains == 0 {
        return Err(stage(EXIT_CONFIG)(Error::config("--chains", "must be at least 1")));
    }
    match &cli.command {
        Command::Simulate => simulate(&load_config(g).map_err(stage(EXIT_CONFIG))?, g),
        Command::Select {
            observations,
            latent,
            template,
        } => select(g, observations.as_deref(), latent.as_deref(), template.as_deref()),
        Command::Infer {
            observations,
            latent,
            decision,
            template,
            vanilla,
        } => infer(g, observations.as_deref(), latent.as_deref(), decision.as_deref(), template.as_deref(), *vanilla),
        Command::Diagnose {
            chain_files,
            params,
            max_lag,
            butterfly,
            butterfly_seeds,
            compare,
        } => diagnose(g, chain_files, params, *max_lag, *butterfly, *butterfly_seeds, compare.as_deref())
            .map_err(stage(EXIT_CONFIG)),
    }
}

fn load_config(g: &GlobalArgs) -> Result<ExperimentConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config", "a config file is required for this command"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = g.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &g.out {
        cfg.output.dir = out.clone();
    }
    if g.marathon {
        cfg = experiment::marathon(cfg);
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    chains: usize,
    inputs: Vec<PathBuf>,
    config: Option<&'a ExperimentConfig>,
}

fn write_manifest(
    dir: &Path,
    command: &'static str,
    seed: u64,
    chains: usize,
    inputs: Vec<PathBuf>,
    cfg: Option<&ExperimentConfig>,
) -> Result<()> {
    io::write_json(
        &dir.join("manifest.json"),
        &Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            chains,
            inputs,
            config: cfg,
        },
    )
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn dry_run(cfg: &ExperimentConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(cfg).map_err(|e| Error::invalid(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn simulate(cfg: &ExperimentConfig, g: &GlobalArgs) -> std::result::Result<(), Failure> {
    if g.dry_run {
        return dry_run(cfg).map_err(stage(EXIT_CONFIG));
    }
    let dir = &cfg.output.dir;
    create_dir(dir).map_err(stage(EXIT_IO))?;
    let (traj, obs) = experiment::simulate(cfg).map_err(stage(EXIT_CONFIG))?;
    (|| {
        traj.write_csv(&dir.join("latent.csv"))?;
        obs.write_csv(&dir.join("observations.csv"))?;
        write_manifest(dir, "simulate", cfg.system.seed, 1, Vec::new(), Some(cfg))
    })()
    .map_err(stage(EXIT_IO))?;
    println!(
        "simulated {} steps, {} observations -> {}",
        traj.n_steps(),
        obs.len(),
        dir.display()
    );
    Ok(())
}

struct Inputs {
    obs: ObservationSet,
    truth: Option<Trajectory>,
    paths: Vec<PathBuf>,
}

fn read_inputs(cfg: &ExperimentConfig, observations: Option<&Path>, latent: Option<&Path>, start: StartMode) -> Result<Inputs> {
    let dir = &cfg.output.dir;
    let obs_path = observations.map_or_else(|| dir.join("observations.csv"), Path::to_path_buf);
    let obs = ObservationSet::read_csv(&obs_path, cfg.system.r.clone())?;
    if obs.dimension() != cfg.system.p {
        return Err(Error::invalid("observation dimension differs from the config"));
    }
    let mut paths = vec![obs_path];
    let truth = match (start, latent) {
        (StartMode::Interpolate, None) => None,
        (_, l) => {
            let path = l.map_or_else(|| dir.join("latent.csv"), Path::to_path_buf);
            let t = Trajectory::read_csv(&path)?;
            paths.push(path);
            Some(t)
        }
    };
    Ok(Inputs { obs, truth, paths })
}

/// Runs `job(seed)` for each chain, concurrently when there are several.
fn run_chains<T: Send>(base: u64, k: usize, job: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    if k == 1 {
        return Ok(vec![job(base)?]);
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..k as u64).map(|i| s.spawn({
            let job = &job;
            move || job(base + i)
        })).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::invalid("chain thread panicked"))))
            .collect()
    })
}

fn chain_dir(stage_dir: &Path, k: usize, i: usize) -> PathBuf {
    if k == 1 {
        stage_dir.to_path_buf()
    } else {
        stage_dir.join(format!("chain_{i}"))
    }
}

fn template_arg(flag: Option<&str>, cfg: Option<SystemId>) -> Result<Option<SystemId>> {
    match flag {
        Some(s) => parse_template_hint(s),
        None => Ok(cfg),
    }
}

fn select(g: &GlobalArgs, observations: Option<&Path>, latent: Option<&Path>, template: Option<&str>) -> std::result::Result<(), Failure> {
    let mut cfg = load_config(g).map_err(stage(EXIT_CONFIG))?;
    cfg.inference.template = template_arg(template, cfg.inference.template).map_err(stage(EXIT_CONFIG))?;
    if g.dry_run {
        return dry_run(&cfg).map_err(stage(EXIT_CONFIG));
    }
    let inputs = read_inputs(&cfg, observations, latent, cfg.selection.start).map_err(stage(EXIT_IO))?;
    let stage_dir = cfg.output.dir.join("select");
    let runs = run_chains(cfg.selection.seed, g.chains, |seed| {
        experiment::run_selection(&cfg, &inputs.obs, inputs.truth.as_ref(), seed)
    })
    .map_err(stage(EXIT_SELECT))?;
    let basis = DictionaryBasis::new(cfg.system.p).map_err(stage(EXIT_SELECT))?;
    for (i, run) in runs.iter().enumerate() {
        let dir = chain_dir(&stage_dir, g.chains, i);
        let decision = Decision::new(run, cfg.inference.template).map_err(stage(EXIT_SELECT))?;
        (|| {
            create_dir(&dir)?;
            io::write_json(
                &dir.join("gamma_probs.json"),
                &serde_json::json!({
                    "terms": basis.terms().iter().map(|t| t.name()).collect::<Vec<_>>(),
                    "probabilities": run.report.inclusion_probabilities,
                    "samples": run.report.samples,
                }),
            )?;
            io::write_json(&dir.join("decision.json"), &decision)?;
            io::write_json(&dir.join("acceptance.json"), &run.output.acceptance_report())?;
            run.output.write_samples_csv(&dir.join("ss_chain.csv"))?;
            write_manifest(&dir, "select", run.output.settings.seed, g.chains, inputs.paths.clone(), Some(&cfg))
        })()
        .map_err(stage(EXIT_IO))?;
        for w in &run.report.warnings {
            eprintln!("warning: {w}");
        }
        println!(
            "chain {i}: {} active term(s), indices {:?}{} -> {}",
            run.mask.active_count(),
            run.report.selected_indices,
            match run.report.matches_truth {
                Some(true) => " (matches truth)",
                Some(false) => " (differs from truth)",
                None => "",
            },
            dir.display()
        );
    }
    Ok(())
}

fn infer(
    g: &GlobalArgs,
    observations: Option<&Path>,
    latent: Option<&Path>,
    decision: Option<&Path>,
    template: Option<&str>,
    vanilla: bool,
) -> std::result::Result<(), Failure> {
    let mut cfg = load_config(g).map_err(stage(EXIT_CONFIG))?;
    cfg.inference.template = template_arg(template, cfg.inference.template).map_err(stage(EXIT_CONFIG))?;
    if g.dry_run {
        return dry_run(&cfg).map_err(stage(EXIT_CONFIG));
    }
    let mut inputs = read_inputs(&cfg, observations, latent, cfg.inference.start).map_err(stage(EXIT_IO))?;
    let decision_path = decision.map_or_else(|| cfg.output.dir.join("select").join("decision.json"), Path::to_path_buf);
    let reduced = if decision.is_none() && !decision_path.exists() && template.is_some() {
        let id = cfg.inference.template.ok_or_else(|| stage(EXIT_CONFIG)(Error::config("--template", "no template named")))?;
        experiment::forced_template(&cfg, id).map_err(stage(EXIT_INFER))?
    } else {
        let d: Decision = io::read_json(&decision_path).map_err(stage(EXIT_IO))?;
        inputs.paths.push(decision_path);
        d.reduce(cfg.inference.template).map_err(stage(EXIT_INFER))?
    };
    if let Some(note) = &reduced.note {
        eprintln!("note: {note}");
    }
    let m0 = cfg.inference.m0.clone().unwrap_or_else(|| reduced.m0.clone());
    let truth = experiment::true_parameters(&cfg, &reduced).map_err(stage(EXIT_INFER))?;
    let stage_dir = cfg.output.dir.join("infer");
    let outputs = run_chains(cfg.inference.seed, g.chains, |seed| {
        let lin = experiment::run_inference(&cfg, &inputs.obs, &reduced, inputs.truth.as_ref(), seed)?;
        let van = match vanilla {
            true => Some(experiment::run_vanilla(&cfg, &inputs.obs, &reduced, inputs.truth.as_ref(), seed)?),
            false => None,
        };
        Ok((lin, van))
    })
    .map_err(stage(EXIT_INFER))?;
    for (i, (out, van)) in outputs.iter().enumerate() {
        let dir = chain_dir(&stage_dir, g.chains, i);
        let summary = InferenceSummary::new(out, &reduced, m0.clone(), truth.clone()).map_err(stage(EXIT_INFER))?;
        (|| {
            create_dir(&dir)?;
            out.write_samples_csv(&dir.join("inf_chain.csv"))?;
            out.write_sigma_csv(&dir.join("sigma_draws.csv"))?;
            io::write_json(&dir.join("summary.json"), &summary)?;
            io::write_json(&dir.join("acceptance.json"), &out.acceptance_report())?;
            io::write_json(&dir.join("reduced_system.json"), &reduced)?;
            if let Some(v) = van {
                v.write_samples_csv(&dir.join("vanilla_chain.csv"))?;
                io::write_json(&dir.join("vanilla_acceptance.json"), &v.acceptance_report())?;
            }
            write_manifest(&dir, "infer", out.settings.seed, g.chains, inputs.paths.clone(), Some(&cfg))
        })()
        .map_err(stage(EXIT_IO))?;
        let means: Vec<String> = summary
            .parameters
            .iter()
            .map(|p| format!("{} = {:.4} (ESS {:.0})", p.name, p.mean, p.ess))
            .collect();
        println!("chain {i}: {} -> {}", means.join(", "), dir.display());
    }
    Ok(())
}

fn is_summarised(name: &str) -> bool {
    !name.starts_with("gamma[")
}

fn table_column(table: &io::Table, name: &str) -> Result<Vec<f64>> {
    table.column(name).ok_or_else(|| Error::UnknownParameter {
        name: name.to_string(),
        available: table.header.join(", "),
    })
}

fn diagnose(
    g: &GlobalArgs,
    chains: &[PathBuf],
    params: &[String],
    max_lag: usize,
    butterfly: bool,
    butterfly_seeds: u64,
    compare: Option<&[PathBuf]>,
) -> Result<()> {
    let cfg = match &g.config {
        Some(_) => Some(load_config(g)?),
        None => None,
    };
    let out_dir = g
        .out
        .clone()
        .or_else(|| cfg.as_ref().map(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    if g.dry_run {
        return cfg.as_ref().map_or(Ok(()), dry_run);
    }
    let dir = out_dir.join("diagnose");
    create_dir(&dir)?;
    let mut inputs = Vec::new();

    if let Some([lin, van]) = compare {
        let (a, b) = (io::read_table(lin)?, io::read_table(van)?);
        let names: Vec<String> = match params.is_empty() {
            true => a.header.iter().filter(|n| is_summarised(n) && b.column_index(n).is_some()).cloned().collect(),
            false => params.to_vec(),
        };
        let mut rows = Vec::new();
        for name in &names {
            let ea = effective_sample_size(&table_column(&a, name)?)?;
            let eb = effective_sample_size(&table_column(&b, name)?)?;
            println!("{name}: ESS linchpin {ea:.1}, vanilla {eb:.1}, ratio {:.3}", ea / eb);
            rows.push(serde_json::json!({ "name": name, "ess_linchpin": ea, "ess_vanilla": eb, "ratio": ea / eb }));
        }
        io::write_json(&dir.join("ess_comparison.json"), &rows)?;
        inputs.extend([lin.clone(), van.clone()]);
    }

    let chain_files: Vec<PathBuf> = match (chains.is_empty(), compare.is_some() || butterfly) {
        (false, _) => chains.to_vec(),
        (true, false) => vec![out_dir.join("infer").join("inf_chain.csv")],
        (true, true) => Vec::new(),
    };
    let mut summaries: Vec<ChainSummary> = Vec::new();
    for file in &chain_files {
        let table = io::read_table(file)?;
        let names: Vec<String> = match params.is_empty() {
            true => table.header.iter().filter(|n| is_summarised(n)).cloned().collect(),
            false => params.to_vec(),
        };
        let prefix = match chain_files.len() {
            1 => String::new(),
            _ => format!("{}:", file.display()),
        };
        for name in &names {
            let series = table_column(&table, name)?;
            summaries.push(summarize_series(&format!("{prefix}{name}"), &series, max_lag)?);
        }
        inputs.push(file.clone());
    }
    if !chain_files.is_empty() {
        io::write_json(&dir.join("summary.json"), &summaries)?;
        write_acf_csv(&dir.join("acf.csv"), &summaries)?;
        write_density_csv(&dir.join("density.csv"), &summaries)?;
        for s in &summaries {
            println!(
                "{}: mean {:.5}, sd {:.5}, 95% [{:.5}, {:.5}], ESS {:.1}",
                s.name, s.mean, s.sd, s.q025, s.q975, s.ess
            );
        }
    }

    if butterfly {
        let base = g.seed.unwrap_or(1);
        let seeds: Vec<u64> = (0..butterfly_seeds).map(|i| base + i).collect();
        let rows = experiment::butterfly_table(&seeds)?;
        experiment::write_butterfly_csv(&dir.join("butterfly_table.csv"), &rows)?;
        println!("s        Sigma_x     Sigma_y     Sigma_z     analytic");
        for r in &rows {
            println!(
                "{:<8} {:<11.4} {:<11.4} {:<11.4} {:.4}",
                r.noise_sd, r.mean[0], r.mean[1], r.mean[2], r.analytic
            );
        }
    }

    // the butterfly table has its own fixed configuration
    let table_cfg = butterfly.then(|| experiment::butterfly_config(g.seed.unwrap_or(1)));
    let used = cfg.as_ref().or(table_cfg.as_ref());
    let seed = g.seed.or(used.map(|c| c.system.seed)).unwrap_or(1);
    write_manifest(&dir, "diagnose", seed, 1, inputs, used)
}
