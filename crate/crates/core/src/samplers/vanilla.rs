//! Baseline sampler that keeps `Sigma` in the state instead of integrating
//! it out; used to measure what the linchpin construction buys.

use super::inference::run_drift_chain;
use super::{ChainOutput, ChainSettings, InfChainState};
use crate::dynamics::{DriftModel, ObservationSet};
use crate::error::{Error, Result};
use crate::posterior::{model_drift_path, sigma_conditional_params, InfHyperParams};

#[derive(Debug, Clone, PartialEq)]
pub struct VanillaInit {
    pub state: InfChainState,
    /// Starting diffusion; the full-conditional mean at the start when absent.
    pub sigma: Option<Vec<f64>>,
}

/// Component-wise random-walk MH over `(theta, log Sigma, X)`.
pub fn run_vanilla_chain(
    obs: &ObservationSet,
    model: &DriftModel,
    h: &InfHyperParams,
    init: VanillaInit,
    settings: &ChainSettings,
) -> Result<ChainOutput> {
    let VanillaInit { state, sigma } = init;
    let sigma = match sigma {
        Some(s) => {
            if s.len() != state.path.dimension() || s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::invalid("starting Sigma must be positive with one entry per component"));
            }
            s
        }
        None => {
            let drift = model_drift_path(&state.path, model, &state.theta)?;
            sigma_conditional_params(&state.path, &drift, h.alpha, h.beta)?
                .iter()
                .map(|ig| ig.rate / (ig.shape - 1.0))
                .collect()
        }
    };
    run_drift_chain(obs, model, h, state, Some(sigma), settings)
}
