//! Drift models, Euler-Maruyama simulation and noisy subsampling.

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dictionary::{CoefficientMatrix, DictionaryBasis};
use crate::error::{Error, Result};
use crate::io;

/// Absolute tolerance for matching time-stamps to grid points.
pub const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SystemId {
    #[serde(rename = "L96")]
    Lorenz96,
    #[serde(rename = "L63")]
    Lorenz63,
    #[serde(rename = "OU")]
    OrnsteinUhlenbeck,
    #[serde(rename = "GenericDictionary")]
    GenericDictionary,
}

impl SystemId {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "L96" | "LORENZ96" => Ok(Self::Lorenz96),
            "L63" | "LORENZ63" => Ok(Self::Lorenz63),
            "OU" | "ORNSTEINUHLENBECK" => Ok(Self::OrnsteinUhlenbeck),
            "GENERIC" | "GENERICDICTIONARY" => Ok(Self::GenericDictionary),
            other => Err(Error::invalid(format!("unknown system `{other}`"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Lorenz96 => "L96",
            Self::Lorenz63 => "L63",
            Self::OrnsteinUhlenbeck => "OU",
            Self::GenericDictionary => "GenericDictionary",
        }
    }

    /// State dimension of the built-in systems.
    pub fn dimension(&self) -> Option<usize> {
        match self {
            Self::Lorenz96 => Some(4),
            Self::Lorenz63 => Some(3),
            Self::OrnsteinUhlenbeck => Some(1),
            Self::GenericDictionary => None,
        }
    }
}

/// Functional form of the drift; the free parameters live in [`SystemSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum DriftModel {
    Lorenz96,
    Lorenz63,
    OrnsteinUhlenbeck,
    /// `B * features(x, t)` where B is zero except on `support`, whose
    /// entries are the free parameters in order.
    Dictionary {
        basis: DictionaryBasis,
        support: Vec<(usize, usize)>,
    },
}

impl DriftModel {
    /// The parametric model of a built-in system.
    pub fn builtin(id: SystemId) -> Option<Self> {
        match id {
            SystemId::Lorenz96 => Some(Self::Lorenz96),
            SystemId::Lorenz63 => Some(Self::Lorenz63),
            SystemId::OrnsteinUhlenbeck => Some(Self::OrnsteinUhlenbeck),
            SystemId::GenericDictionary => None,
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Self::Lorenz96 => 4,
            Self::Lorenz63 => 3,
            Self::OrnsteinUhlenbeck => 1,
            Self::Dictionary { basis, .. } => basis.p(),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Self::Lorenz96 | Self::OrnsteinUhlenbeck => 1,
            Self::Lorenz63 => 3,
            Self::Dictionary { support, .. } => support.len(),
        }
    }

    pub fn system_id(&self) -> SystemId {
        match self {
            Self::Lorenz96 => SystemId::Lorenz96,
            Self::Lorenz63 => SystemId::Lorenz63,
            Self::OrnsteinUhlenbeck => SystemId::OrnsteinUhlenbeck,
            Self::Dictionary { .. } => SystemId::GenericDictionary,
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Self::Lorenz96 | Self::OrnsteinUhlenbeck => vec!["theta".into()],
            Self::Lorenz63 => vec!["sigma".into(), "rho".into(), "beta".into()],
            Self::Dictionary { support, .. } => support
                .iter()
                .map(|&(i, j)| format!("B[{},{}]", i + 1, j + 1))
                .collect(),
        }
    }

    /// The drift at one state. `scratch` is only touched by dictionary models.
    pub fn eval_into(&self, theta: &[f64], x: &[f64], t: f64, scratch: &mut Vec<f64>, out: &mut [f64]) {
        match self {
            Self::Lorenz96 => {
                let p = x.len();
                for i in 0..p {
                    let next = x[(i + 1) % p];
                    let prev = x[(i + p - 1) % p];
                    let prev2 = x[(i + p - 2) % p];
                    out[i] = (next - prev2) * prev - x[i] + theta[0];
                }
            }
            Self::Lorenz63 => {
                let (sigma, rho, beta) = (theta[0], theta[1], theta[2]);
                out[0] = sigma * (x[1] - x[0]);
                out[1] = rho * x[0] - x[1] - x[0] * x[2];
                out[2] = x[0] * x[1] - beta * x[2];
            }
            Self::OrnsteinUhlenbeck => out[0] = -theta[0] * x[0],
            Self::Dictionary { basis, support } => {
                scratch.resize(basis.p_star(), 0.0);
                basis.features_into(x, t, scratch);
                dictionary_drift(support, theta, scratch, out);
            }
        }
    }
}

/// `out = B(theta) * features` for a sparse support.
pub fn dictionary_drift(support: &[(usize, usize)], theta: &[f64], features: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for (&(i, j), &c) in support.iter().zip(theta) {
        out[i] += c * features[j];
    }
}

/// A drift model together with its parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    model: DriftModel,
    theta: Vec<f64>,
}

impl SystemSpec {
    pub fn new(model: DriftModel, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != model.n_params() {
            return Err(Error::invalid(format!(
                "{:?} takes {} parameter(s), got {}",
                model.system_id(),
                model.n_params(),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("drift parameters must be finite"));
        }
        Ok(Self { model, theta })
    }

    pub fn lorenz96(theta: f64) -> Self {
        Self {
            model: DriftModel::Lorenz96,
            theta: vec![theta],
        }
    }

    pub fn lorenz63(sigma: f64, rho: f64, beta: f64) -> Self {
        Self {
            model: DriftModel::Lorenz63,
            theta: vec![sigma, rho, beta],
        }
    }

    pub fn ornstein_uhlenbeck(theta: f64) -> Self {
        Self {
            model: DriftModel::OrnsteinUhlenbeck,
            theta: vec![theta],
        }
    }

    /// Built-in system from its id and parameter vector.
    pub fn known(id: SystemId, theta: &[f64]) -> Result<Self> {
        let model = DriftModel::builtin(id)
            .ok_or_else(|| Error::invalid("GenericDictionary needs a coefficient matrix"))?;
        Self::new(model, theta.to_vec())
    }

    /// Dense dictionary drift: every entry of B is a parameter (row-major).
    pub fn generic(b: &CoefficientMatrix) -> Result<Self> {
        let basis = DictionaryBasis::new(b.p())?;
        if basis.p_star() != b.p_star() {
            return Err(Error::invalid("coefficient matrix width does not match the dictionary"));
        }
        let support: Vec<(usize, usize)> = (0..b.p())
            .flat_map(|i| (0..b.p_star()).map(move |j| (i, j)))
            .collect();
        let theta = support.iter().map(|&ij| b.values[ij]).collect();
        Self::new(DriftModel::Dictionary { basis, support }, theta)
    }

    /// Dictionary drift restricted to `support`, with one parameter per entry.
    pub fn sparse(p: usize, support: Vec<(usize, usize)>, theta: Vec<f64>) -> Result<Self> {
        let basis = DictionaryBasis::new(p)?;
        if support.iter().any(|&(i, j)| i >= p || j >= basis.p_star()) {
            return Err(Error::invalid("support entry outside the coefficient matrix"));
        }
        Self::new(DriftModel::Dictionary { basis, support }, theta)
    }

    pub fn model(&self) -> &DriftModel {
        &self.model
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn dimension(&self) -> usize {
        self.model.dimension()
    }

    pub fn system_id(&self) -> SystemId {
        self.model.system_id()
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(self.model.clone(), theta)
    }
}

/// `f(t, state; theta)`.
pub fn evaluate_drift(spec: &SystemSpec, state: &[f64], t: f64) -> Result<Vec<f64>> {
    if state.len() != spec.dimension() {
        return Err(Error::invalid(format!(
            "state has length {}, {:?} has dimension {}",
            state.len(),
            spec.system_id(),
            spec.dimension()
        )));
    }
    let mut out = vec![0.0; state.len()];
    spec.model.eval_into(&spec.theta, state, t, &mut Vec::new(), &mut out);
    Ok(out)
}

/// Diagonal of the diffusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub sigma_diag: Vec<f64>,
}

impl DiffusionSpec {
    /// Zero entries are accepted and give a deterministic Euler recursion.
    pub fn new(sigma_diag: Vec<f64>) -> Result<Self> {
        if sigma_diag.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("diffusion entries must be finite and non-negative"));
        }
        Ok(Self { sigma_diag })
    }

    pub fn isotropic(p: usize, sigma: f64) -> Result<Self> {
        Self::new(vec![sigma; p])
    }
}

/// A uniformly gridded path `X_0 .. X_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    /// `(N + 1) x p`.
    pub states: Array2<f64>,
}

/// The sampled latent path inside a chain has the same layout as a trajectory.
pub type LatentPath = Trajectory;

impl Trajectory {
    pub fn new(t0: f64, dt: f64, states: Array2<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("step size must be positive"));
        }
        if states.nrows() == 0 || states.ncols() == 0 {
            return Err(Error::invalid("trajectory needs at least one state"));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("trajectory has non-finite entries"));
        }
        Ok(Self { t0, dt, states })
    }

    /// N, the number of Euler steps.
    pub fn n_steps(&self) -> usize {
        self.states.nrows() - 1
    }

    pub fn dimension(&self) -> usize {
        self.states.ncols()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.n_steps())
    }

    pub fn state(&self, k: usize) -> ArrayView1<'_, f64> {
        self.states.row(k)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = state_header(self.dimension());
        io::write_table(
            path,
            &header,
            self.states.rows().into_iter().enumerate().map(|(k, row)| {
                let mut r = vec![self.time(k)];
                r.extend(row.iter());
                r
            }),
        )
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let table = io::read_table(path)?;
        let (times, states) = split_state_table(path, &table)?;
        if times.len() < 2 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "trajectory needs at least two rows to infer the step size".into(),
            });
        }
        let dt = times[1] - times[0];
        Self::new(times[0], dt, states)
    }
}

fn state_header(p: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=p).map(|i| format!("x{i}")))
        .collect()
}

fn split_state_table(path: &Path, table: &io::Table) -> Result<(Vec<f64>, Array2<f64>)> {
    if table.header.first().map(String::as_str) != Some("t") || table.header.len() < 2 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "expected header `t,x1,...,xp`".into(),
        });
    }
    let p = table.header.len() - 1;
    let times = table.rows.iter().map(|r| r[0]).collect();
    let flat: Vec<f64> = table.rows.iter().flat_map(|r| r[1..].iter().copied()).collect();
    let states = Array2::from_shape_vec((table.rows.len(), p), flat).expect("rectangular table");
    Ok((times, states))
}

/// Noisy observations `Y_i = X(t_i) + eps_i`, `eps_i ~ N(0, diag(R))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub times: Vec<f64>,
    /// `K x p`.
    pub values: Array2<f64>,
    pub r_diag: Vec<f64>,
}

impl ObservationSet {
    pub fn new(times: Vec<f64>, values: Array2<f64>, r_diag: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::invalid("an observation set needs K >= 1"));
        }
        if values.nrows() != times.len() || values.ncols() != r_diag.len() {
            return Err(Error::invalid("observation shapes are inconsistent"));
        }
        if r_diag.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::invalid("observation noise variances must be positive"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observations must be finite"));
        }
        Ok(Self {
            times,
            values,
            r_diag,
        })
    }

    /// No data at all, for sampling the path prior alone.
    pub fn unobserved(p: usize) -> Self {
        Self {
            times: Vec::new(),
            values: Array2::zeros((0, p)),
            r_diag: vec![1.0; p],
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.values.ncols()
    }

    /// Grid index of every observation on the grid `t0 + k*dt`, `k <= n_steps`.
    pub fn grid_indices(&self, t0: f64, dt: f64, n_steps: usize) -> Result<Vec<usize>> {
        self.times
            .iter()
            .map(|&t| {
                let k = ((t - t0) / dt).round();
                if k < 0.0 || k > n_steps as f64 || (t0 + k * dt - t).abs() > GRID_TOL {
                    Err(Error::Alignment { time: t })
                } else {
                    Ok(k as usize)
                }
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = state_header(self.dimension());
        io::write_table(
            path,
            &header,
            self.values.rows().into_iter().zip(&self.times).map(|(row, &t)| {
                let mut r = vec![t];
                r.extend(row.iter());
                r
            }),
        )
    }

    pub fn read_csv(path: &Path, r_diag: Vec<f64>) -> Result<Self> {
        let table = io::read_table(path)?;
        let (times, values) = split_state_table(path, &table)?;
        Self::new(times, values, r_diag)
    }
}

fn steps_for(span: f64, dt: f64, what: &str) -> Result<usize> {
    let ratio = span / dt;
    let n = ratio.round();
    if (ratio - n).abs() > GRID_TOL {
        return Err(Error::invalid(format!("{what} / dt = {ratio} is not an integer")));
    }
    Ok(n as usize)
}

/// Euler-Maruyama simulation of `dX = f dt + Sigma^{1/2} dW`.
///
/// `burn_in / dt` steps are taken from `x_init` (standard normal if `None`)
/// and discarded; the last burn-in state becomes `X_0` at `t0`.
pub fn euler_maruyama_simulate(
    spec: &SystemSpec,
    diffusion: &DiffusionSpec,
    x_init: Option<&[f64]>,
    t0: f64,
    t_end: f64,
    dt: f64,
    burn_in: f64,
    rng_seed: u64,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_end > t0) || !(burn_in >= 0.0) {
        return Err(Error::invalid("need dt > 0, t_end > t0 and burn_in >= 0"));
    }
    let p = spec.dimension();
    if diffusion.sigma_diag.len() != p {
        return Err(Error::invalid("diffusion dimension does not match the system"));
    }
    let n = steps_for(t_end - t0, dt, "t_end - t0")?;
    let n_burn = (burn_in / dt).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut x: Vec<f64> = match x_init {
        Some(x0) if x0.len() == p => x0.to_vec(),
        Some(_) => return Err(Error::invalid("initial state has the wrong dimension")),
        None => (0..p).map(|_| rng.sample(StandardNormal)).collect(),
    };
    let noise_sd: Vec<f64> = diffusion.sigma_diag.iter().map(|s| (s * dt).sqrt()).collect();
    let mut f = vec![0.0; p];
    let mut scratch = Vec::new();
    let mut step = |x: &mut Vec<f64>, t: f64, rng: &mut ChaCha8Rng| {
        spec.model.eval_into(&spec.theta, x, t, &mut scratch, &mut f);
        for i in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            x[i] = x[i] + f[i] * dt + noise_sd[i] * z;
        }
    };

    let burn_start = t0 - n_burn as f64 * dt;
    for k in 0..n_burn {
        step(&mut x, burn_start + k as f64 * dt, &mut rng);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k });
        }
    }
    let mut states = Array2::zeros((n + 1, p));
    states.row_mut(0).assign(&ArrayView1::from(&x[..]));
    for k in 0..n {
        step(&mut x, t0 + k as f64 * dt, &mut rng);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: n_burn + k });
        }
        states.row_mut(k + 1).assign(&ArrayView1::from(&x[..]));
    }
    Ok(Trajectory { t0, dt, states })
}

/// Subsamples `traj` every `1/(obs_per_unit*dt)` grid points, skipping `X_0`,
/// and adds independent `N(0, R_i)` noise. Zero variances are allowed here.
pub fn observe(traj: &Trajectory, obs_per_unit: usize, r_diag: &[f64], rng_seed: u64) -> Result<ObservationSet> {
    if obs_per_unit == 0 {
        return Err(Error::invalid("obs_per_unit must be positive"));
    }
    let p = traj.dimension();
    if r_diag.len() != p || r_diag.iter().any(|&r| !(r >= 0.0)) {
        return Err(Error::invalid("R must be a non-negative diagonal of length p"));
    }
    let stride = steps_for(1.0 / obs_per_unit as f64, traj.dt, "observation spacing")?;
    if stride == 0 {
        return Err(Error::invalid("observation spacing is finer than the grid"));
    }
    let indices: Vec<usize> = (1..)
        .map(|m| m * stride)
        .take_while(|&k| k <= traj.n_steps())
        .collect();
    if indices.is_empty() {
        return Err(Error::invalid("trajectory is too short to hold one observation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let sd: Vec<f64> = r_diag.iter().map(|r| r.sqrt()).collect();
    let mut values = Array2::zeros((indices.len(), p));
    for (row, &k) in indices.iter().enumerate() {
        for i in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            values[[row, i]] = traj.states[[k, i]] + sd[i] * z;
        }
    }
    Ok(ObservationSet {
        times: indices.iter().map(|&k| traj.time(k)).collect(),
        values,
        r_diag: r_diag.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn drift_hand_values() {
        assert_eq!(
            evaluate_drift(&SystemSpec::lorenz96(8.0), &[1.0; 4], 0.0).unwrap(),
            vec![7.0; 4]
        );
        let l63 = evaluate_drift(&SystemSpec::lorenz63(10.0, 28.0, 8.0 / 3.0), &[1.0; 3], 0.0).unwrap();
        assert_eq!(l63[0], 0.0);
        assert_eq!(l63[1], 26.0);
        assert!((l63[2] + 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            evaluate_drift(&SystemSpec::ornstein_uhlenbeck(2.0), &[1.0], 0.0).unwrap(),
            vec![-2.0]
        );
    }

    #[test]
    fn drift_dimension_mismatch() {
        assert!(matches!(
            evaluate_drift(&SystemSpec::lorenz96(8.0), &[1.0; 3], 0.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn deterministic_ou_recursion() {
        let spec = SystemSpec::ornstein_uhlenbeck(2.0);
        let diff = DiffusionSpec::new(vec![0.0]).unwrap();
        let traj = euler_maruyama_simulate(&spec, &diff, Some(&[1.0]), 0.0, 1.0, 0.01, 0.0, 3).unwrap();
        let mut x = 1.0f64;
        for k in 0..=100 {
            assert_eq!(traj.states[[k, 0]], x);
            assert!((x - 0.98f64.powi(k as i32)).abs() < 1e-12);
            x = x + (-2.0 * x) * 0.01;
        }
    }

    #[test]
    fn lorenz96_table_counts() {
        let spec = SystemSpec::lorenz96(8.0);
        let diff = DiffusionSpec::isotropic(4, 0.5).unwrap();
        let traj = euler_maruyama_simulate(&spec, &diff, None, 0.0, 10.0, 0.01, 50.0, 1).unwrap();
        assert_eq!(traj.n_steps(), 1000);
        assert_eq!(traj.states.nrows(), 1001);
        let obs = observe(&traj, 20, &[0.05; 4], 2).unwrap();
        assert_eq!(obs.len(), 200);
    }

    #[test]
    fn ou_observation_count() {
        let spec = SystemSpec::ornstein_uhlenbeck(2.0);
        let diff = DiffusionSpec::new(vec![1.0]).unwrap();
        let traj = euler_maruyama_simulate(&spec, &diff, None, 0.0, 2.0, 0.01, 50.0, 9).unwrap();
        let obs = observe(&traj, 20, &[0.05], 10).unwrap();
        assert_eq!(obs.len(), 40);
        assert!((obs.times[0] - 0.05).abs() < 1e-12);
        for w in obs.times.windows(2) {
            assert!((w[1] - w[0] - 0.05).abs() < 1e-9);
        }
        let idx = obs.grid_indices(0.0, 0.01, traj.n_steps()).unwrap();
        assert_eq!(idx[0], 5);
        assert_eq!(*idx.last().unwrap(), 200);
    }

    #[test]
    fn zero_noise_observations_equal_states() {
        let spec = SystemSpec::lorenz63(10.0, 28.0, 8.0 / 3.0);
        let diff = DiffusionSpec::isotropic(3, 0.6).unwrap();
        let traj = euler_maruyama_simulate(&spec, &diff, None, 0.0, 2.0, 0.01, 1.0, 4).unwrap();
        let obs = observe(&traj, 20, &[0.0; 3], 5).unwrap();
        for (row, &k) in obs.grid_indices(0.0, 0.01, traj.n_steps()).unwrap().iter().enumerate() {
            assert_eq!(obs.values.row(row), traj.states.row(k));
        }
    }

    #[test]
    fn non_integral_stride_rejected() {
        let spec = SystemSpec::ornstein_uhlenbeck(2.0);
        let diff = DiffusionSpec::new(vec![1.0]).unwrap();
        let traj = euler_maruyama_simulate(&spec, &diff, None, 0.0, 2.0, 0.01, 0.0, 9).unwrap();
        assert!(matches!(observe(&traj, 30, &[0.05], 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn non_integral_span_rejected() {
        let spec = SystemSpec::ornstein_uhlenbeck(2.0);
        let diff = DiffusionSpec::new(vec![1.0]).unwrap();
        assert!(euler_maruyama_simulate(&spec, &diff, None, 0.0, 1.005, 0.01, 0.0, 1).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let spec = SystemSpec::ornstein_uhlenbeck(-1e6);
        let diff = DiffusionSpec::new(vec![0.0]).unwrap();
        match euler_maruyama_simulate(&spec, &diff, Some(&[1.0]), 0.0, 100.0, 0.1, 0.0, 1) {
            Err(Error::Divergence { step }) => assert!(step > 10 && step < 1000),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn seeds_control_the_path() {
        let spec = SystemSpec::lorenz96(8.0);
        let diff = DiffusionSpec::isotropic(4, 0.5).unwrap();
        let x0 = [1.0, 2.0, 3.0, 4.0];
        let a = euler_maruyama_simulate(&spec, &diff, Some(&x0), 0.0, 1.0, 0.01, 0.0, 11).unwrap();
        let b = euler_maruyama_simulate(&spec, &diff, Some(&x0), 0.0, 1.0, 0.01, 0.0, 11).unwrap();
        let c = euler_maruyama_simulate(&spec, &diff, Some(&x0), 0.0, 1.0, 0.01, 0.0, 12).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.states.row(0), c.states.row(0));
        assert_ne!(a.states.row(1), c.states.row(1));
    }

    #[test]
    fn random_walk_increment_variance() {
        // Zero drift: X_N - X_0 ~ N(0, N dt). Monte-Carlo oracle over 10^4 paths.
        let basis = DictionaryBasis::new(1).unwrap();
        let spec = SystemSpec::generic(&CoefficientMatrix::zeros(&basis)).unwrap();
        let diff = DiffusionSpec::new(vec![1.0]).unwrap();
        let reps = 10_000;
        let incr: Vec<f64> = (0..reps)
            .map(|s| {
                let tr = euler_maruyama_simulate(&spec, &diff, Some(&[0.0]), 0.0, 0.5, 0.01, 0.0, s).unwrap();
                tr.states[[50, 0]] - tr.states[[0, 0]]
            })
            .collect();
        let mean = incr.iter().sum::<f64>() / reps as f64;
        let var = incr.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let target = 50.0 * 0.01;
        // sd of the sample variance of a Gaussian: target * sqrt(2/(n-1))
        let se = target * (2.0 / (reps - 1) as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se, "var {var} vs {target} (se {se})");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SystemSpec::lorenz63(10.0, 28.0, 8.0 / 3.0);
        let diff = DiffusionSpec::isotropic(3, 0.6).unwrap();
        let traj = euler_maruyama_simulate(&spec, &diff, None, 0.0, 1.0, 0.01, 1.0, 4).unwrap();
        let path = dir.path().join("latent.csv");
        traj.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,x1,x2,x3\n"));
        let back = Trajectory::read_csv(&path).unwrap();
        assert_eq!(back.states, traj.states);
        let obs = observe(&traj, 20, &[0.05; 3], 1).unwrap();
        let opath = dir.path().join("obs.csv");
        obs.write_csv(&opath).unwrap();
        assert_eq!(ObservationSet::read_csv(&opath, vec![0.05; 3]).unwrap(), obs);
    }

    proptest! {
        #[test]
        fn lorenz96_is_rotation_equivariant(x in proptest::collection::vec(-10.0f64..10.0, 4), shift in 1usize..4) {
            let spec = SystemSpec::lorenz96(8.0);
            let f = evaluate_drift(&spec, &x, 0.0).unwrap();
            let rotated: Vec<f64> = (0..4).map(|i| x[(i + shift) % 4]).collect();
            let fr = evaluate_drift(&spec, &rotated, 0.0).unwrap();
            for i in 0..4 {
                prop_assert!((fr[i] - f[(i + shift) % 4]).abs() < 1e-12);
            }
        }
    }
}
