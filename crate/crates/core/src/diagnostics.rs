//! Convergence and efficiency summaries of recorded chains.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::samplers::ChainOutput;

pub const DENSITY_BINS: usize = 200;
pub const DEFAULT_MAX_LAG: usize = 100;
pub const MIN_ESS_DRAWS: usize = 100;

fn mean_var(series: &[f64]) -> (f64, f64) {
    let n = series.len() as f64;
    let m = series.iter().sum::<f64>() / n;
    let v = series.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v)
}

fn check(series: &[f64]) -> Result<(f64, f64)> {
    if series.is_empty() {
        return Err(Error::EmptyChain);
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("series contains non-finite values"));
    }
    let (m, v) = mean_var(series);
    if v <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((m, v))
}

/// Biased sample autocorrelation for lags `0..=max_lag`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let (m, _) = check(series)?;
    let n = series.len();
    if max_lag >= n {
        return Err(Error::invalid(format!("max lag {max_lag} needs more than {n} draws")));
    }
    let lagged = |k: usize| {
        series[..n - k]
            .iter()
            .zip(&series[k..])
            .map(|(a, b)| (a - m) * (b - m))
            .sum::<f64>()
    };
    let denom = lagged(0);
    Ok((0..=max_lag).map(|k| lagged(k) / denom).collect())
}

/// Batch-means effective sample size with batches of `floor(sqrt(n))`,
/// capped at `n`.
pub fn effective_sample_size(series: &[f64]) -> Result<f64> {
    let (_, _) = check(series)?;
    let n = series.len();
    if n < MIN_ESS_DRAWS {
        return Err(Error::invalid(format!("effective sample size needs at least {MIN_ESS_DRAWS} draws, got {n}")));
    }
    let b = (n as f64).sqrt().floor() as usize;
    let a = n / b;
    let used = &series[..a * b];
    let (m, var) = mean_var(used);
    let var = var * (used.len() as f64) / (used.len() as f64 - 1.0);
    let batch_var = used
        .chunks_exact(b)
        .map(|c| (c.iter().sum::<f64>() / b as f64 - m).powi(2))
        .sum::<f64>()
        * b as f64
        / (a as f64 - 1.0);
    if batch_var <= 0.0 {
        return Ok(n as f64);
    }
    Ok((n as f64 * var / batch_var).min(n as f64))
}

/// Type-7 sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Normalised histogram; draws outside the binned range are not counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub bin_left: Vec<f64>,
    pub bin_right: Vec<f64>,
    pub density: Vec<f64>,
}

/// `bins` equal bins spanning `mean +- 4 sd`.
pub fn binned_density(series: &[f64], bins: usize) -> Result<Density> {
    let (m, v) = check(series)?;
    if bins == 0 {
        return Err(Error::invalid("density needs at least one bin"));
    }
    let sd = v.sqrt();
    let (lo, width) = (m - 4.0 * sd, 8.0 * sd / bins as f64);
    let mut counts = vec![0usize; bins];
    for &x in series {
        let k = ((x - lo) / width).floor();
        if k >= 0.0 && (k as usize) < bins {
            counts[k as usize] += 1;
        } else if x == lo + 8.0 * sd {
            counts[bins - 1] += 1;
        }
    }
    let norm = 1.0 / (series.len() as f64 * width);
    Ok(Density {
        bin_left: (0..bins).map(|k| lo + k as f64 * width).collect(),
        bin_right: (0..bins).map(|k| lo + (k + 1) as f64 * width).collect(),
        density: counts.iter().map(|&c| c as f64 * norm).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub name: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
    pub ess: f64,
    pub acf: Vec<f64>,
    pub density: Option<Density>,
    /// Constant series: no spread, ACF or density; ESS reported as `n`.
    pub degenerate: bool,
}

pub fn summarize_series(name: &str, series: &[f64], max_lag: usize) -> Result<ChainSummary> {
    if series.is_empty() {
        return Err(Error::EmptyChain);
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = series.len();
    let (mean, var) = mean_var(series);
    let base = ChainSummary {
        name: name.to_string(),
        n,
        mean,
        sd: if n > 1 { (var * n as f64 / (n as f64 - 1.0)).sqrt() } else { 0.0 },
        q025: quantile_sorted(&sorted, 0.025),
        median: quantile_sorted(&sorted, 0.5),
        q975: quantile_sorted(&sorted, 0.975),
        ess: n as f64,
        acf: Vec::new(),
        density: None,
        degenerate: true,
    };
    match check(series) {
        Err(Error::ZeroVariance) => return Ok(base),
        Err(e) => return Err(e),
        Ok(_) => {}
    }
    Ok(ChainSummary {
        ess: effective_sample_size(series)?,
        acf: autocorrelation(series, max_lag.min(n - 1))?,
        density: Some(binned_density(series, DENSITY_BINS)?),
        degenerate: false,
        ..base
    })
}

/// Summaries of the named columns; every drift parameter and diffusion
/// component when `names` is empty.
pub fn summarize_chain(output: &ChainOutput, names: &[String], max_lag: usize) -> Result<Vec<ChainSummary>> {
    if output.n_samples() == 0 {
        return Err(Error::EmptyChain);
    }
    let default: Vec<String>;
    let names = if names.is_empty() {
        default = output.param_names.iter().cloned().chain(output.sigma_names()).collect();
        &default
    } else {
        names
    };
    names
        .iter()
        .map(|name| summarize_series(name, &output.column(name)?, max_lag))
        .collect()
}

pub fn write_summary_csv(path: &Path, summaries: &[ChainSummary]) -> Result<()> {
    io::write_labelled_table(
        path,
        &["parameter", "mean", "sd", "q2.5", "median", "q97.5", "ess"],
        summaries
            .iter()
            .map(|s| (s.name.clone(), vec![s.mean, s.sd, s.q025, s.median, s.q975, s.ess])),
    )
}

/// One column per parameter, one row per lag.
pub fn write_acf_csv(path: &Path, summaries: &[ChainSummary]) -> Result<()> {
    let lags = summaries.iter().map(|s| s.acf.len()).max().unwrap_or(0);
    let mut header = vec!["lag".to_string()];
    header.extend(summaries.iter().map(|s| s.name.clone()));
    io::write_table(
        path,
        &header,
        (0..lags).map(|k| {
            let mut row = vec![k as f64];
            row.extend(summaries.iter().map(|s| s.acf.get(k).copied().unwrap_or(f64::NAN)));
            row
        }),
    )
}

/// Long format: `param, bin_left, bin_right, density`.
pub fn write_density_csv(path: &Path, summaries: &[ChainSummary]) -> Result<()> {
    io::write_labelled_table(
        path,
        &["param", "bin_left", "bin_right", "density"],
        summaries.iter().flat_map(|s| {
            s.density.iter().flat_map(|d| {
                (0..d.density.len()).map(|k| (s.name.clone(), vec![d.bin_left[k], d.bin_right[k], d.density[k]]))
            })
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssComparison {
    pub name: String,
    pub ess_linchpin: f64,
    pub ess_vanilla: f64,
    pub ratio: f64,
    pub ess_per_sec_linchpin: f64,
    pub ess_per_sec_vanilla: f64,
}

/// Per-parameter ESS of two chains over the same model.
pub fn compare_ess(linchpin: &ChainOutput, vanilla: &ChainOutput) -> Result<Vec<EssComparison>> {
    linchpin
        .param_names
        .iter()
        .map(|name| {
            let a = effective_sample_size(&linchpin.column(name)?)?;
            let b = effective_sample_size(&vanilla.column(name)?)?;
            Ok(EssComparison {
                name: name.clone(),
                ess_linchpin: a,
                ess_vanilla: b,
                ratio: a / b,
                ess_per_sec_linchpin: a / linchpin.elapsed_secs.max(1e-9),
                ess_per_sec_vanilla: b / vanilla.elapsed_secs.max(1e-9),
            })
        })
        .collect()
}
