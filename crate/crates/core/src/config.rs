//! Declarative experiment configuration.
//!
//! Configs are INI files with `[system]`, `[selection]`, `[inference]` and
//! `[output]` sections. Every run writes the fully resolved config into its
//! manifest, and a manifest is itself accepted wherever a config is.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use ini::{Ini, Properties};
use serde::{Deserialize, Serialize};

use crate::dynamics::SystemId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartMode {
    /// Start the latent path (and coefficients) at the simulated truth.
    Truth,
    /// Start from the interpolated observations.
    Interpolate,
}

impl StartMode {
    fn parse(field: &str, s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "truth" => Ok(Self::Truth),
            "interpolate" | "interpolated" => Ok(Self::Interpolate),
            other => Err(Error::config(field, format!("`{other}` is not one of truth, interpolate"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub system: SystemId,
    /// Drift parameters; for a generic dictionary, B flattened row-major.
    pub theta: Vec<f64>,
    /// Diffusion diagonal, one entry per component.
    pub sigma: Vec<f64>,
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Simulated time discarded before `t0`.
    pub burn_in: f64,
    pub obs_per_unit: usize,
    pub r: Vec<f64>,
    pub seed: u64,
    pub x_init: Option<Vec<f64>>,
    /// State dimension, only needed for a generic dictionary.
    pub p: usize,
}

impl SystemConfig {
    pub fn n_steps(&self) -> usize {
        ((self.t_end - self.t0) / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub tau0: f64,
    pub tau1: f64,
    pub q_active: f64,
    pub q_inactive: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `None` means the first observation.
    pub mu0: Option<Vec<f64>>,
    pub lambda0_sq: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub start: StartMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Collapse a matching selected support onto this built-in model.
    pub template: Option<SystemId>,
    pub s0_sq: f64,
    /// Explicit prior mean, overriding the selection-stage estimate.
    pub m0: Option<Vec<f64>>,
    pub alpha: f64,
    pub beta: f64,
    pub mu0: Option<Vec<f64>>,
    pub lambda0_sq: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub start: StartMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub selection: SelectionConfig,
    pub inference: InferenceConfig,
    pub output: OutputConfig,
}

/// Per-system settings: `(t_end, theta, sigma, burn-in, tau0, tau1)`.
fn table_settings(system: SystemId) -> (f64, Vec<f64>, f64, f64, f64, f64) {
    match system {
        SystemId::Lorenz96 => (10.0, vec![8.0], 0.5, 50.0, 0.13, 4.52),
        SystemId::Lorenz63 => (20.0, vec![10.0, 28.0, 8.0 / 3.0], 0.6, 5000.0, 0.5, 5.0),
        SystemId::OrnsteinUhlenbeck => (2.0, vec![2.0], 1.0, 50.0, 0.09, 2.9),
        SystemId::GenericDictionary => (10.0, Vec::new(), 1.0, 50.0, 0.1, 3.0),
    }
}

impl ExperimentConfig {
    /// Defaults for one built-in system: the standard data settings plus
    /// desk-scale chain lengths.
    pub fn defaults(system: SystemId, p: usize) -> Self {
        let (t_end, theta, sigma, burn_in, tau0, tau1) = table_settings(system);
        let p = system.dimension().unwrap_or(p);
        let seed = 1;
        Self {
            system: SystemConfig {
                system,
                theta,
                sigma: vec![sigma; p],
                t0: 0.0,
                t_end,
                dt: 0.01,
                burn_in,
                obs_per_unit: 20,
                r: vec![0.05; p],
                seed,
                x_init: None,
                p,
            },
            selection: SelectionConfig {
                tau0,
                tau1,
                q_active: 0.9,
                q_inactive: 0.1,
                alpha: 2.0,
                beta: 1.0,
                mu0: None,
                lambda0_sq: 1.0,
                iterations: 100_000,
                burn_in: 20_000,
                thin: 10,
                start: StartMode::Interpolate,
                seed: seed + 1,
            },
            inference: InferenceConfig {
                template: None,
                s0_sq: 4.0,
                m0: None,
                alpha: 2.0,
                beta: 1.0,
                mu0: None,
                lambda0_sq: 1.0,
                iterations: 200_000,
                burn_in: 20_000,
                thin: 10,
                start: StartMode::Interpolate,
                seed: seed + 2,
            },
            output: OutputConfig {
                dir: PathBuf::from("out").join(system.label().to_ascii_lowercase()),
            },
        }
    }

    /// Loads an INI config, or the `config` object of a run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if text.trim_start().starts_with('{') {
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            let cfg = value.get("config").cloned().unwrap_or(value);
            let cfg: Self = serde_json::from_value(cfg).map_err(|e| Error::config("manifest", e.to_string()))?;
            cfg.validate()?;
            return Ok(cfg);
        }
        Self::from_ini_str(&text)
    }

    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        for (name, _) in ini.iter() {
            match name {
                None | Some("system") | Some("selection") | Some("inference") | Some("output") => {}
                Some(other) => return Err(Error::config(other, "unknown section")),
            }
        }
        let empty = Properties::new();
        let mut sys = Section::new("system", ini.section(Some("system")).unwrap_or(&empty));
        let system = SystemId::parse(&sys.required("system")?).map_err(|e| Error::config("system.system", e.to_string()))?;
        let p_default = system.dimension().unwrap_or(0);
        let p = sys.usize("p")?.unwrap_or(p_default);
        if p == 0 {
            return Err(Error::config("system.p", "required for a generic dictionary"));
        }
        let mut cfg = Self::defaults(system, p);
        let s = &mut cfg.system;
        if let Some(v) = sys.vec("theta")? {
            s.theta = v;
        }
        if let Some(v) = sys.vec("sigma")? {
            s.sigma = broadcast(v, p, "system.sigma")?;
        }
        sys.set_f64("t0", &mut s.t0)?;
        sys.set_f64("t_end", &mut s.t_end)?;
        sys.set_f64("dt", &mut s.dt)?;
        sys.set_f64("burn_in", &mut s.burn_in)?;
        if let Some(v) = sys.usize("obs_per_unit")? {
            s.obs_per_unit = v;
        }
        if let Some(v) = sys.vec("r")? {
            s.r = broadcast(v, p, "system.r")?;
        }
        let seed_given = sys.u64("seed")?;
        if let Some(v) = seed_given {
            s.seed = v;
        }
        s.x_init = sys.vec("x_init")?;
        sys.finish()?;
        let base_seed = s.seed;

        let mut sel = Section::new("selection", ini.section(Some("selection")).unwrap_or(&empty));
        let c = &mut cfg.selection;
        sel.set_f64("tau0", &mut c.tau0)?;
        sel.set_f64("tau1", &mut c.tau1)?;
        sel.set_f64("q_active", &mut c.q_active)?;
        sel.set_f64("q_inactive", &mut c.q_inactive)?;
        sel.set_f64("alpha", &mut c.alpha)?;
        sel.set_f64("beta", &mut c.beta)?;
        c.mu0 = sel.mu0()?;
        sel.set_f64("lambda0_sq", &mut c.lambda0_sq)?;
        sel.set_usize("iterations", &mut c.iterations)?;
        sel.set_usize("burn_in", &mut c.burn_in)?;
        sel.set_usize("thin", &mut c.thin)?;
        if let Some(v) = sel.string("start") {
            c.start = StartMode::parse("selection.start", &v)?;
        }
        c.seed = sel.u64("seed")?.unwrap_or(base_seed + 1);
        sel.finish()?;

        let mut inf = Section::new("inference", ini.section(Some("inference")).unwrap_or(&empty));
        let c = &mut cfg.inference;
        if let Some(v) = inf.string("template") {
            c.template = parse_template(&v).map_err(|m| Error::config("inference.template", m))?;
        }
        inf.set_f64("s0_sq", &mut c.s0_sq)?;
        c.m0 = inf.vec("m0")?;
        inf.set_f64("alpha", &mut c.alpha)?;
        inf.set_f64("beta", &mut c.beta)?;
        c.mu0 = inf.mu0()?;
        inf.set_f64("lambda0_sq", &mut c.lambda0_sq)?;
        inf.set_usize("iterations", &mut c.iterations)?;
        inf.set_usize("burn_in", &mut c.burn_in)?;
        inf.set_usize("thin", &mut c.thin)?;
        if let Some(v) = inf.string("start") {
            c.start = StartMode::parse("inference.start", &v)?;
        }
        c.seed = inf.u64("seed")?.unwrap_or(base_seed + 2);
        inf.finish()?;

        let mut out = Section::new("output", ini.section(Some("output")).unwrap_or(&empty));
        if let Some(v) = out.string("dir") {
            cfg.output.dir = PathBuf::from(v);
        }
        out.finish()?;

        cfg.validate()?;
        Ok(cfg)
    }

    /// Reseeds every stage from one base seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.system.seed = seed;
        self.selection.seed = seed + 1;
        self.inference.seed = seed + 2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        let p = s.p;
        if let Some(d) = s.system.dimension() {
            if d != p {
                return Err(Error::config("system.p", format!("{} has dimension {d}", s.system.label())));
            }
            let need = if s.system == SystemId::Lorenz63 { 3 } else { 1 };
            if s.theta.len() != need {
                return Err(Error::config("system.theta", format!("expected {need} value(s)")));
            }
        } else if s.theta.len() != p * crate::dictionary::dictionary_dim(p)? {
            return Err(Error::config("system.theta", "generic dictionary needs p x p* coefficients, row-major"));
        }
        if s.sigma.len() != p || s.sigma.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::config("system.sigma", "needs p non-negative values"));
        }
        if s.r.len() != p || s.r.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::config("system.r", "needs p positive values"));
        }
        if !(s.dt > 0.0) || !(s.t_end > s.t0) {
            return Err(Error::config("system.dt", "need dt > 0 and t_end > t0"));
        }
        if !(s.burn_in >= 0.0) {
            return Err(Error::config("system.burn_in", "must be non-negative"));
        }
        if s.obs_per_unit == 0 {
            return Err(Error::config("system.obs_per_unit", "must be positive"));
        }
        if let Some(x) = &s.x_init {
            if x.len() != p {
                return Err(Error::config("system.x_init", "needs p values"));
            }
        }
        let c = &self.selection;
        if !(c.tau0 > 0.0 && c.tau1 >= c.tau0) {
            return Err(Error::config("selection.tau1", "need tau1 >= tau0 > 0"));
        }
        for (name, q) in [("selection.q_active", c.q_active), ("selection.q_inactive", c.q_inactive)] {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::config(name, "must lie in (0, 1)"));
            }
        }
        check_chain("selection", c.alpha, c.beta, c.lambda0_sq, c.iterations, c.burn_in, c.thin, &c.mu0, p)?;
        let c = &self.inference;
        if !(c.s0_sq > 0.0) {
            return Err(Error::config("inference.s0_sq", "must be positive"));
        }
        check_chain("inference", c.alpha, c.beta, c.lambda0_sq, c.iterations, c.burn_in, c.thin, &c.mu0, p)?;
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn check_chain(
    section: &str,
    alpha: f64,
    beta: f64,
    lambda0_sq: f64,
    iterations: usize,
    burn_in: usize,
    thin: usize,
    mu0: &Option<Vec<f64>>,
    p: usize,
) -> Result<()> {
    if !(alpha > 0.0) {
        return Err(Error::config(format!("{section}.alpha"), "must be positive"));
    }
    if !(beta > 0.0) {
        return Err(Error::config(format!("{section}.beta"), "must be positive"));
    }
    if !(lambda0_sq > 0.0) {
        return Err(Error::config(format!("{section}.lambda0_sq"), "must be positive"));
    }
    if thin == 0 {
        return Err(Error::config(format!("{section}.thin"), "must be at least 1"));
    }
    if iterations < burn_in {
        return Err(Error::config(format!("{section}.iterations"), "must be at least burn_in"));
    }
    if mu0.as_ref().is_some_and(|m| m.len() != p) {
        return Err(Error::config(format!("{section}.mu0"), "needs p values"));
    }
    Ok(())
}

fn parse_template(s: &str) -> std::result::Result<Option<SystemId>, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" | "none" | "untied" => Ok(None),
        _ => match SystemId::parse(s.trim()) {
            Ok(SystemId::GenericDictionary) => Ok(None),
            Ok(id) => Ok(Some(id)),
            Err(e) => Err(e.to_string()),
        },
    }
}

/// Parses a template name; `none` or `untied` means no template.
pub fn parse_template_hint(s: &str) -> Result<Option<SystemId>> {
    parse_template(s).map_err(|m| Error::config("template", m))
}

fn broadcast(v: Vec<f64>, p: usize, field: &str) -> Result<Vec<f64>> {
    match v.len() {
        1 => Ok(vec![v[0]; p]),
        n if n == p => Ok(v),
        n => Err(Error::config(field, format!("expected 1 or {p} values, got {n}"))),
    }
}

/// Typed access to one INI section that remembers which keys were read.
struct Section<'a> {
    name: &'static str,
    props: &'a Properties,
    used: HashSet<String>,
}

impl<'a> Section<'a> {
    fn new(name: &'static str, props: &'a Properties) -> Self {
        Self {
            name,
            props,
            used: HashSet::new(),
        }
    }

    fn field(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn string(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.props.get(key).map(|v| v.trim().to_string())
    }

    fn required(&mut self, key: &str) -> Result<String> {
        self.string(key).ok_or_else(|| Error::config(self.field(key), "missing"))
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.string(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(self.field(key), format!("cannot parse `{v}`"))),
        }
    }

    fn usize(&mut self, key: &str) -> Result<Option<usize>> {
        // accept 1e5-style counts
        match self.string(key) {
            None => Ok(None),
            Some(v) => match v.parse::<usize>() {
                Ok(n) => Ok(Some(n)),
                Err(_) => match v.parse::<f64>() {
                    Ok(f) if f >= 0.0 && f.fract() == 0.0 && f < 1e15 => Ok(Some(f as usize)),
                    _ => Err(Error::config(self.field(key), format!("`{v}` is not a non-negative integer"))),
                },
            },
        }
    }

    fn u64(&mut self, key: &str) -> Result<Option<u64>> {
        self.parse(key)
    }

    fn set_f64(&mut self, key: &str, slot: &mut f64) -> Result<()> {
        if let Some(v) = self.parse::<f64>(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn set_usize(&mut self, key: &str, slot: &mut usize) -> Result<()> {
        if let Some(v) = self.usize(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn vec(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.string(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::config(self.field(key), format!("cannot parse `{}`", x.trim())))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    /// `first_observation` (the default) or an explicit vector.
    fn mu0(&mut self) -> Result<Option<Vec<f64>>> {
        match self.props.get("mu0").map(str::trim) {
            None | Some("first_observation") => {
                self.used.insert("mu0".into());
                Ok(None)
            }
            Some(_) => self.vec("mu0"),
        }
    }

    fn finish(self) -> Result<()> {
        for (key, _) in self.props.iter() {
            if !self.used.contains(key) {
                return Err(Error::config(self.field(key), "unknown key"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OU: &str = "[system]\nsystem = OU\ntheta = 2\nsigma = 1\nt_end = 2\n[selection]\niterations = 1e5\nstart = interpolate\n[output]\ndir = /tmp/x\n";

    #[test]
    fn ini_defaults_and_overrides() {
        let c = ExperimentConfig::from_ini_str(OU).unwrap();
        assert_eq!(c.system.system, SystemId::OrnsteinUhlenbeck);
        assert_eq!(c.system.n_steps(), 200);
        assert_eq!(c.selection.iterations, 100_000);
        assert_eq!((c.selection.tau0, c.selection.tau1), (0.09, 2.9));
        assert_eq!(c.selection.seed, 2);
        assert_eq!(c.output.dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn errors_name_the_field() {
        let bad = OU.replace("theta = 2", "theta = two");
        match ExperimentConfig::from_ini_str(&bad) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "system.theta"),
            other => panic!("{other:?}"),
        }
        let unknown = OU.replace("t_end = 2", "t_end = 2\ntypo = 3");
        assert!(matches!(ExperimentConfig::from_ini_str(&unknown), Err(Error::Config { field, .. }) if field == "system.typo"));
        let missing = OU.replace("system = OU\n", "");
        assert!(matches!(ExperimentConfig::from_ini_str(&missing), Err(Error::Config { field, .. }) if field == "system.system"));
    }

    #[test]
    fn manifest_round_trip() {
        let c = ExperimentConfig::from_ini_str(OU).unwrap().with_seed(9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        crate::io::write_json(&path, &serde_json::json!({ "tool": "x", "config": c })).unwrap();
        assert_eq!(ExperimentConfig::load(&path).unwrap(), c);
    }
}
