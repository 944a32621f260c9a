//! From spike-and-slab draws to a reduced drift model.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dictionary::{active_entries, encode_known_system, ActiveEntry, CoefficientMatrix, DictionaryBasis, InclusionMask};
use crate::dynamics::{DriftModel, SystemId};
use crate::error::{Error, Result};
use crate::samplers::{ChainKind, ChainOutput};

/// Inclusion probabilities closer than this to 1/2 are reported as fragile.
pub const BORDERLINE_BAND: f64 = 0.05;

fn coefficient_draws(out: &ChainOutput) -> Result<(usize, usize)> {
    if out.kind != ChainKind::SpikeSlab {
        return Err(Error::invalid("inclusion probabilities need a spike-and-slab chain"));
    }
    if out.n_samples() == 0 {
        return Err(Error::EmptyChain);
    }
    out.coefficient_shape
        .ok_or_else(|| Error::invalid("chain has no coefficient matrix"))
}

fn unflatten(flat: impl Iterator<Item = f64>, rows: usize, cols: usize) -> Array2<f64> {
    // draws are stored column-major
    let v: Vec<f64> = flat.collect();
    Array2::from_shape_fn((rows, cols), |(i, j)| v[j * rows + i])
}

/// Posterior mean of each indicator, `p x p*`.
pub fn inclusion_probabilities(out: &ChainOutput) -> Result<Array2<f64>> {
    let (rows, cols) = coefficient_draws(out)?;
    let g = out.inclusion.as_ref().ok_or(Error::EmptyChain)?;
    let n = g.nrows() as f64;
    let means = g
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|&v| f64::from(v)).sum::<f64>() / n);
    Ok(unflatten(means, rows, cols))
}

/// Posterior mean of B.
pub fn posterior_mean_coefficients(out: &ChainOutput) -> Result<CoefficientMatrix> {
    let (rows, cols) = coefficient_draws(out)?;
    let means = out.params.mean_axis(ndarray::Axis(0)).ok_or(Error::EmptyChain)?;
    CoefficientMatrix::new(unflatten(means.into_iter(), rows, cols))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BorderlineEntry {
    pub name: String,
    pub column_major_index: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MedianModel {
    pub mask: InclusionMask,
    pub probabilities: Array2<f64>,
    pub borderline: Vec<BorderlineEntry>,
    pub warnings: Vec<String>,
}

impl MedianModel {
    pub fn is_empty(&self) -> bool {
        self.mask.active_count() == 0
    }
}

/// Keeps exactly the terms with inclusion probability strictly above 1/2.
pub fn median_probability_model(probs: &Array2<f64>, basis: &DictionaryBasis) -> Result<MedianModel> {
    if probs.dim() != (basis.p(), basis.p_star()) {
        return Err(Error::invalid("probability matrix does not match the dictionary"));
    }
    if probs.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
        return Err(Error::invalid("inclusion probabilities must lie in [0, 1]"));
    }
    let mask = InclusionMask {
        flags: probs.mapv(|q| u8::from(q > 0.5)),
    };
    let mut borderline: Vec<BorderlineEntry> = probs
        .indexed_iter()
        .filter(|(_, &q)| (q - 0.5).abs() <= BORDERLINE_BAND)
        .map(|((i, j), &q)| BorderlineEntry {
            name: basis.entry_name(i, j),
            column_major_index: crate::dictionary::column_major_index(i, j, basis.p()),
            probability: q,
        })
        .collect();
    borderline.sort_by_key(|b| b.column_major_index);
    let mut warnings: Vec<String> = borderline
        .iter()
        .map(|b| format!("{} has inclusion probability {:.3}, close to 1/2", b.name, b.probability))
        .collect();
    if mask.active_count() == 0 {
        warnings.push("no term exceeds inclusion probability 1/2; the selected model is empty".into());
    }
    Ok(MedianModel {
        mask,
        probabilities: probs.clone(),
        borderline,
        warnings,
    })
}

/// How the selected terms are parameterised for inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tying {
    /// One free parameter per selected entry of B.
    Untied,
    /// The built-in model's parameters, when the support matches it exactly.
    Template(SystemId),
}

/// The drift model handed to the inference stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedSystem {
    pub system: SystemId,
    pub p: usize,
    /// 0-based (row, col) entries of B, row-major; only for dictionary models.
    pub support: Vec<(usize, usize)>,
    pub param_names: Vec<String>,
    /// Prior means of the parameters, from the posterior mean of B.
    pub m0: Vec<f64>,
    pub note: Option<String>,
}

impl ReducedSystem {
    pub fn model(&self) -> Result<DriftModel> {
        match DriftModel::builtin(self.system) {
            Some(model) => Ok(model),
            None => Ok(DriftModel::Dictionary {
                basis: DictionaryBasis::new(self.p)?,
                support: self.support.clone(),
            }),
        }
    }
}

fn template_hint(system: SystemId, b: &CoefficientMatrix, basis: &DictionaryBasis) -> Vec<f64> {
    let v = &b.values;
    match system {
        SystemId::Lorenz96 => {
            let c = basis.constant();
            vec![(0..basis.p()).map(|i| v[[i, c]]).sum::<f64>() / basis.p() as f64]
        }
        SystemId::Lorenz63 => vec![
            0.5 * (-v[[0, basis.linear(0)]] + v[[0, basis.linear(1)]]),
            v[[1, basis.linear(0)]],
            -v[[2, basis.linear(2)]],
        ],
        SystemId::OrnsteinUhlenbeck => vec![-v[[0, basis.linear(0)]]],
        SystemId::GenericDictionary => Vec::new(),
    }
}

/// Reduced model on the support of `mask`, with prior means taken from
/// `b_mean`. A template whose support differs from `mask` falls back to the
/// untied model and says so in `note`.
pub fn reduce_system(
    mask: &InclusionMask,
    b_mean: &CoefficientMatrix,
    basis: &DictionaryBasis,
    tying: Tying,
) -> Result<ReducedSystem> {
    if mask.active_count() == 0 {
        return Err(Error::EmptyModel);
    }
    if mask.flags.dim() != (basis.p(), basis.p_star()) || b_mean.values.dim() != mask.flags.dim() {
        return Err(Error::invalid("mask and coefficients must match the dictionary"));
    }
    let mut note = None;
    if let Tying::Template(system) = tying {
        if let Some(model) = DriftModel::builtin(system) {
            let matches = system.dimension() == Some(basis.p())
                && encode_known_system(system, &vec![1.0; model.n_params()])
                    .map(|(_, pattern)| pattern == *mask)
                    .unwrap_or(false);
            if matches {
                return Ok(ReducedSystem {
                    system,
                    p: basis.p(),
                    support: Vec::new(),
                    param_names: model.param_names(),
                    m0: template_hint(system, b_mean, basis),
                    note: None,
                });
            }
            note = Some(format!(
                "selected support differs from the {} template; using one parameter per selected term",
                system.label()
            ));
        }
    }
    let support = mask.active();
    let model = DriftModel::Dictionary {
        basis: basis.clone(),
        support: support.clone(),
    };
    Ok(ReducedSystem {
        system: SystemId::GenericDictionary,
        p: basis.p(),
        m0: support.iter().map(|&ij| b_mean.values[ij]).collect(),
        param_names: model.param_names(),
        support,
        note,
    })
}

/// JSON record of one selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub p: usize,
    pub p_star: usize,
    pub samples: usize,
    pub terms: Vec<String>,
    pub inclusion_probabilities: Vec<Vec<f64>>,
    pub posterior_mean: Vec<Vec<f64>>,
    pub selected: Vec<ActiveEntry>,
    /// 1-based column-major indices of the selected entries.
    pub selected_indices: Vec<usize>,
    pub true_indices: Option<Vec<usize>>,
    pub matches_truth: Option<bool>,
    pub borderline: Vec<BorderlineEntry>,
    pub warnings: Vec<String>,
}

impl SelectionReport {
    pub fn new(
        out: &ChainOutput,
        median: &MedianModel,
        b_mean: &CoefficientMatrix,
        basis: &DictionaryBasis,
        truth: Option<&InclusionMask>,
    ) -> Self {
        let rows = |a: &Array2<f64>| a.rows().into_iter().map(|r| r.to_vec()).collect();
        let mut selected = active_entries(b_mean, &median.mask, basis);
        selected.sort_by_key(|e| e.column_major_index);
        let selected_indices = median.mask.column_major_active();
        let true_indices = truth.map(InclusionMask::column_major_active);
        Self {
            p: basis.p(),
            p_star: basis.p_star(),
            samples: out.n_samples(),
            terms: basis.terms().iter().map(|t| t.name()).collect(),
            inclusion_probabilities: rows(&median.probabilities),
            posterior_mean: rows(&b_mean.values),
            selected,
            matches_truth: true_indices.as_ref().map(|t| *t == selected_indices),
            selected_indices,
            true_indices,
            borderline: median.borderline.clone(),
            warnings: median.warnings.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn strict_half_threshold_and_warnings() {
        let basis = DictionaryBasis::new(1).unwrap();
        let probs = array![[0.5, 0.97, 0.53, 0.1, 0.0]];
        let m = median_probability_model(&probs, &basis).unwrap();
        assert_eq!(m.mask.flags, array![[0, 1, 1, 0, 0]]);
        let names: Vec<&str> = m.borderline.iter().map(|b| b.name.as_str()).collect();
        assert_eq!(names.len(), 2);
        assert_eq!(m.warnings.len(), 2);
    }

    #[test]
    fn empty_model_flows_to_reduce_error() {
        let basis = DictionaryBasis::new(1).unwrap();
        let m = median_probability_model(&array![[0.1, 0.2, 0.3, 0.0, 0.4]], &basis).unwrap();
        assert!(m.is_empty());
        assert!(m.warnings.iter().any(|w| w.contains("empty")));
        let b = CoefficientMatrix::zeros(&basis);
        assert!(matches!(reduce_system(&m.mask, &b, &basis, Tying::Untied), Err(Error::EmptyModel)));
    }

    #[test]
    fn lorenz63_template_hint() {
        let basis = DictionaryBasis::new(3).unwrap();
        let (mut b, mask) = encode_known_system(SystemId::Lorenz63, &[10.0, 28.0, 8.0 / 3.0]).unwrap();
        b.values[[0, basis.linear(0)]] = -9.0;
        let r = reduce_system(&mask, &b, &basis, Tying::Template(SystemId::Lorenz63)).unwrap();
        assert_eq!(r.system, SystemId::Lorenz63);
        assert!((r.m0[0] - 9.5).abs() < 1e-12);
        assert!((r.m0[1] - 28.0).abs() < 1e-12);
        assert!((r.m0[2] - 8.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.model().unwrap(), DriftModel::Lorenz63);
    }

    #[test]
    fn lorenz96_template_and_untied() {
        let basis = DictionaryBasis::new(4).unwrap();
        let (mut b, mask) = encode_known_system(SystemId::Lorenz96, &[8.0]).unwrap();
        b.values[[2, basis.constant()]] = 9.0;
        let r = reduce_system(&mask, &b, &basis, Tying::Template(SystemId::Lorenz96)).unwrap();
        assert!((r.m0[0] - 8.25).abs() < 1e-12);
        let u = reduce_system(&mask, &b, &basis, Tying::Untied).unwrap();
        assert_eq!(u.m0.len(), 16);
        assert_eq!(u.support, mask.active());
    }

    #[test]
    fn mismatched_template_falls_back() {
        let basis = DictionaryBasis::new(1).unwrap();
        let mask = InclusionMask::new(array![[1, 1, 0, 0, 0]]).unwrap();
        let b = CoefficientMatrix::new(array![[0.3, -2.0, 0.0, 0.0, 0.0]]).unwrap();
        let r = reduce_system(&mask, &b, &basis, Tying::Template(SystemId::OrnsteinUhlenbeck)).unwrap();
        assert_eq!(r.system, SystemId::GenericDictionary);
        assert!(r.note.is_some());
        assert_eq!(r.m0, vec![0.3, -2.0]);
    }
}
