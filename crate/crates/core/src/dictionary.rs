//! The order-two candidate dictionary and the coefficient matrix over it.
//!
//! Column order is fixed: the constant, the `p` linear terms, the `p`
//! squares, the `p(p-1)/2` cross products `XiXj` (i < j, lexicographic),
//! then `t` and `t^2`. Flattened indices are 1-based and column-major, so
//! entry (row `i`, column `j`) has index `j*p + i + 1` when both are 0-based.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dynamics::SystemId;
use crate::error::{Error, Result};
use crate::io;

/// Number of dictionary terms for a `p`-dimensional state.
pub fn dictionary_dim(p: usize) -> Result<usize> {
    if p == 0 {
        return Err(Error::invalid("dictionary dimension requires p >= 1"));
    }
    Ok(2 * p + p * (p - 1) / 2 + 3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Constant,
    Linear(usize),
    Square(usize),
    Cross(usize, usize),
    Time,
    TimeSquared,
}

impl Term {
    /// Human-readable name with 1-based state indices, e.g. `X2*X4`.
    pub fn name(&self) -> String {
        match *self {
            Term::Constant => "1".into(),
            Term::Linear(i) => format!("X{}", i + 1),
            Term::Square(i) => format!("X{}^2", i + 1),
            Term::Cross(i, j) => format!("X{}*X{}", i + 1, j + 1),
            Term::Time => "t".into(),
            Term::TimeSquared => "t^2".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryBasis {
    p: usize,
    terms: Vec<Term>,
}

impl DictionaryBasis {
    pub fn new(p: usize) -> Result<Self> {
        let p_star = dictionary_dim(p)?;
        let mut terms = Vec::with_capacity(p_star);
        terms.push(Term::Constant);
        terms.extend((0..p).map(Term::Linear));
        terms.extend((0..p).map(Term::Square));
        for i in 0..p {
            for j in i + 1..p {
                terms.push(Term::Cross(i, j));
            }
        }
        terms.push(Term::Time);
        terms.push(Term::TimeSquared);
        debug_assert_eq!(terms.len(), p_star);
        Ok(Self { p, terms })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn p_star(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn constant(&self) -> usize {
        0
    }

    pub fn linear(&self, i: usize) -> usize {
        1 + i
    }

    pub fn square(&self, i: usize) -> usize {
        1 + self.p + i
    }

    /// Column of `XiXj`; the pair is unordered.
    pub fn cross(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        assert!(a != b && b < self.p, "cross term needs two distinct state indices");
        1 + 2 * self.p + a * self.p - a * (a + 1) / 2 + (b - a - 1)
    }

    pub fn time(&self) -> usize {
        self.p_star() - 2
    }

    pub fn time_squared(&self) -> usize {
        self.p_star() - 1
    }

    /// Writes the feature vector for `state` at time `t` into `out`.
    pub fn features_into(&self, state: &[f64], t: f64, out: &mut [f64]) {
        let p = self.p;
        debug_assert_eq!(state.len(), p);
        debug_assert_eq!(out.len(), self.p_star());
        out[0] = 1.0;
        out[1..=p].copy_from_slice(state);
        for i in 0..p {
            out[1 + p + i] = state[i] * state[i];
        }
        let mut k = 1 + 2 * p;
        for i in 0..p {
            for j in i + 1..p {
                out[k] = state[i] * state[j];
                k += 1;
            }
        }
        out[k] = t;
        out[k + 1] = t * t;
    }

    pub fn features(&self, state: &[f64], t: f64) -> Result<Vec<f64>> {
        if state.len() != self.p {
            return Err(Error::invalid(format!(
                "state has length {}, dictionary expects {}",
                state.len(),
                self.p
            )));
        }
        let mut out = vec![0.0; self.p_star()];
        self.features_into(state, t, &mut out);
        Ok(out)
    }

    /// Name of entry (row, col) of B, e.g. `X2*X4 in eq 1`.
    pub fn entry_name(&self, row: usize, col: usize) -> String {
        format!("{} in eq {}", self.terms[col].name(), row + 1)
    }
}

/// Feature vector of `state` at time `t` over the dictionary of matching size.
pub fn build_features(state: &[f64], t: f64) -> Result<Vec<f64>> {
    if state.iter().any(|v| !v.is_finite()) || !t.is_finite() {
        return Err(Error::invalid("features require finite state and time"));
    }
    DictionaryBasis::new(state.len())?.features(state, t)
}

/// 1-based column-major index of entry (`row`, `col`) in a `p`-row matrix.
pub fn column_major_index(row: usize, col: usize, p: usize) -> usize {
    col * p + row + 1
}

/// The `p x p*` drift coefficient matrix B.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub values: Array2<f64>,
}

impl CoefficientMatrix {
    pub fn zeros(basis: &DictionaryBasis) -> Self {
        Self {
            values: Array2::zeros((basis.p(), basis.p_star())),
        }
    }

    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coefficient matrix has non-finite entries"));
        }
        Ok(Self { values })
    }

    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    pub fn p_star(&self) -> usize {
        self.values.ncols()
    }

    /// `out = B * features`.
    pub fn apply_into(&self, features: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.values.rows()) {
            *o = row.iter().zip(features).map(|(b, f)| b * f).sum();
        }
    }

    pub fn write_csv(&self, path: &std::path::Path, basis: &DictionaryBasis) -> Result<()> {
        let header: Vec<String> = basis.terms().iter().map(Term::name).collect();
        io::write_table(path, &header, self.values.rows().into_iter().map(|r| r.to_vec()))
    }
}

/// Binary inclusion indicators, one per entry of B.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InclusionMask {
    pub flags: Array2<u8>,
}

impl InclusionMask {
    pub fn new(flags: Array2<u8>) -> Result<Self> {
        if flags.iter().any(|&g| g > 1) {
            return Err(Error::invalid("inclusion flags must be 0 or 1"));
        }
        Ok(Self { flags })
    }

    pub fn from_nonzero(b: &CoefficientMatrix) -> Self {
        Self {
            flags: b.values.mapv(|v| u8::from(v != 0.0)),
        }
    }

    pub fn active_count(&self) -> usize {
        self.flags.iter().filter(|&&g| g == 1).count()
    }

    /// Active entries as (row, col), in row-major order.
    pub fn active(&self) -> Vec<(usize, usize)> {
        self.flags
            .indexed_iter()
            .filter(|(_, &g)| g == 1)
            .map(|(ij, _)| ij)
            .collect()
    }

    /// Sorted 1-based column-major indices of the active entries.
    pub fn column_major_active(&self) -> Vec<usize> {
        let p = self.flags.nrows();
        let mut idx: Vec<usize> = self
            .active()
            .into_iter()
            .map(|(i, j)| column_major_index(i, j, p))
            .collect();
        idx.sort_unstable();
        idx
    }

    pub fn write_csv(&self, path: &std::path::Path, basis: &DictionaryBasis) -> Result<()> {
        let header: Vec<String> = basis.terms().iter().map(Term::name).collect();
        io::write_table(
            path,
            &header,
            self.flags
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|&g| f64::from(g)).collect()),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveEntry {
    pub row: usize,
    pub column: usize,
    pub column_major_index: usize,
    pub name: String,
    pub value: f64,
}

/// JSON-friendly list of the active entries of B (rows/columns 1-based).
pub fn active_entries(
    b: &CoefficientMatrix,
    mask: &InclusionMask,
    basis: &DictionaryBasis,
) -> Vec<ActiveEntry> {
    let p = basis.p();
    let mut out: Vec<ActiveEntry> = mask
        .active()
        .into_iter()
        .map(|(i, j)| ActiveEntry {
            row: i + 1,
            column: j + 1,
            column_major_index: column_major_index(i, j, p),
            name: basis.entry_name(i, j),
            value: b.values[[i, j]],
        })
        .collect();
    out.sort_by_key(|e| e.column_major_index);
    out
}

/// B and its non-zero pattern for one of the built-in systems.
pub fn encode_known_system(system: SystemId, theta: &[f64]) -> Result<(CoefficientMatrix, InclusionMask)> {
    let need = |d: usize| -> Result<()> {
        if theta.len() != d {
            return Err(Error::invalid(format!(
                "{system:?} takes {d} drift parameter(s), got {}",
                theta.len()
            )));
        }
        Ok(())
    };
    let (basis, values) = match system {
        SystemId::Lorenz96 => {
            need(1)?;
            let p = 4;
            let basis = DictionaryBasis::new(p)?;
            let mut b = Array2::zeros((p, basis.p_star()));
            for i in 0..p {
                let next = (i + 1) % p;
                let prev = (i + p - 1) % p;
                let prev2 = (i + p - 2) % p;
                b[[i, basis.constant()]] += theta[0];
                b[[i, basis.linear(i)]] -= 1.0;
                b[[i, basis.cross(next, prev)]] += 1.0;
                b[[i, basis.cross(prev2, prev)]] -= 1.0;
            }
            (basis, b)
        }
        SystemId::Lorenz63 => {
            need(3)?;
            let (sigma, rho, beta) = (theta[0], theta[1], theta[2]);
            let basis = DictionaryBasis::new(3)?;
            let mut b = Array2::zeros((3, basis.p_star()));
            b[[0, basis.linear(0)]] = -sigma;
            b[[0, basis.linear(1)]] = sigma;
            b[[1, basis.linear(0)]] = rho;
            b[[1, basis.linear(1)]] = -1.0;
            b[[1, basis.cross(0, 2)]] = -1.0;
            b[[2, basis.cross(0, 1)]] = 1.0;
            b[[2, basis.linear(2)]] = -beta;
            (basis, b)
        }
        SystemId::OrnsteinUhlenbeck => {
            need(1)?;
            let basis = DictionaryBasis::new(1)?;
            let mut b = Array2::zeros((1, basis.p_star()));
            b[[0, basis.linear(0)]] = -theta[0];
            (basis, b)
        }
        SystemId::GenericDictionary => {
            return Err(Error::invalid(
                "GenericDictionary has no fixed encoding; build a CoefficientMatrix directly",
            ))
        }
    };
    debug_assert_eq!(values.ncols(), basis.p_star());
    let b = CoefficientMatrix::new(values)?;
    let mask = InclusionMask::from_nonzero(&b);
    Ok((b, mask))
}
