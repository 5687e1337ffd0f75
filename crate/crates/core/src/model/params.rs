use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NetworkStructure;
use crate::scalar::Scalar;

/// Identifier of a single scalar parameter of a noisy-or network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamId {
    /// Prior `p_i` of disease `i`.
    Prior(usize),
    /// Failure `f_{i,j}` on edge `(i, j)`.
    Failure(usize, usize),
    /// Leak `ν_j` of symptom `j`.
    Leak(usize),
}

impl ParamId {
    /// Disease owning the parameter; `None` for leaks.
    pub fn disease(&self) -> Option<usize> {
        match *self {
            ParamId::Prior(i) | ParamId::Failure(i, _) => Some(i),
            ParamId::Leak(_) => None,
        }
    }

    pub fn is_leak(&self) -> bool {
        matches!(self, ParamId::Leak(_))
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::Prior(i) => write!(f, "p[{i}]"),
            ParamId::Failure(i, j) => write!(f, "f[{i},{j}]"),
            ParamId::Leak(j) => write!(f, "leak[{j}]"),
        }
    }
}

/// All parameters of `structure` in canonical order: priors, edge failures
/// (sorted by edge), then leaks when `include_leaks` is set.
pub fn all_param_ids(structure: &NetworkStructure, include_leaks: bool) -> Vec<ParamId> {
    let mut ids: Vec<ParamId> = (0..structure.n_diseases()).map(ParamId::Prior).collect();
    ids.extend(structure.edges().iter().map(|&(i, j)| ParamId::Failure(i, j)));
    if include_leaks {
        ids.extend((0..structure.n_symptoms()).map(ParamId::Leak));
    }
    ids
}

/// Parameters that influence observations: priors of diseases with at least
/// one child, every edge failure and every leak.
pub fn observable_param_ids(structure: &NetworkStructure) -> Vec<ParamId> {
    let mut ids: Vec<ParamId> = (0..structure.n_diseases())
        .filter(|&i| !structure.children(i).is_empty())
        .map(ParamId::Prior)
        .collect();
    ids.extend(structure.edges().iter().map(|&(i, j)| ParamId::Failure(i, j)));
    ids.extend((0..structure.n_symptoms()).map(ParamId::Leak));
    ids
}

/// Priors, per-edge failures and leaks. Non-edges have failure 1 implicitly
/// and are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyOrParameters<T> {
    priors: Vec<T>,
    /// Per disease, `(symptom, failure)` sorted by symptom.
    failures: Vec<Vec<(usize, T)>>,
    leaks: Vec<T>,
}

impl<T: Scalar> NoisyOrParameters<T> {
    /// Builds parameters for `structure`. `failures` must list every edge
    /// exactly once as `(disease, symptom, f)`.
    pub fn new(
        structure: &NetworkStructure,
        priors: Vec<T>,
        failures: impl IntoIterator<Item = (usize, usize, T)>,
        leaks: Vec<T>,
    ) -> Result<Self> {
        if priors.len() != structure.n_diseases() {
            return Err(Error::InvalidParameters(format!(
                "{} priors for {} diseases",
                priors.len(),
                structure.n_diseases()
            )));
        }
        if leaks.len() != structure.n_symptoms() {
            return Err(Error::InvalidParameters(format!(
                "{} leaks for {} symptoms",
                leaks.len(),
                structure.n_symptoms()
            )));
        }
        let mut table: Vec<Vec<(usize, T)>> = vec![Vec::new(); structure.n_diseases()];
        for (i, j, f) in failures {
            if !structure.has_edge(i, j) {
                return Err(Error::InvalidParameters(format!("failure given for non-edge ({i}, {j})")));
            }
            table[i].push((j, f));
        }
        for (i, row) in table.iter_mut().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            let symptoms: Vec<usize> = row.iter().map(|&(j, _)| j).collect();
            if symptoms.as_slice() != structure.children(i) {
                return Err(Error::InvalidParameters(format!(
                    "failures of disease {i} do not match its edges"
                )));
            }
        }
        let params = NoisyOrParameters { priors, failures: table, leaks };
        params.check_ranges()?;
        Ok(params)
    }

    /// Same value for every prior, every edge failure and every leak.
    pub fn uniform(structure: &NetworkStructure, prior: T, failure: T, leak: T) -> Self {
        let failures = (0..structure.n_diseases())
            .map(|i| structure.children(i).iter().map(|&j| (j, failure)).collect())
            .collect();
        NoisyOrParameters {
            priors: vec![prior; structure.n_diseases()],
            failures,
            leaks: vec![leak; structure.n_symptoms()],
        }
    }

    fn check_ranges(&self) -> Result<()> {
        let unit = |x: T| x >= T::zero() && x <= T::one();
        if let Some(i) = self.priors.iter().position(|&p| !unit(p)) {
            return Err(Error::InvalidParameters(format!("prior {i} outside [0, 1]")));
        }
        for (i, row) in self.failures.iter().enumerate() {
            if let Some(&(j, _)) = row.iter().find(|&&(_, f)| !unit(f)) {
                return Err(Error::InvalidParameters(format!("failure ({i}, {j}) outside [0, 1]")));
            }
        }
        if let Some(j) = self.leaks.iter().position(|&l| !(l >= T::zero() && l < T::one())) {
            return Err(Error::InvalidParameters(format!("leak {j} outside [0, 1)")));
        }
        Ok(())
    }

    pub fn n_diseases(&self) -> usize {
        self.priors.len()
    }

    pub fn n_symptoms(&self) -> usize {
        self.leaks.len()
    }

    pub fn priors(&self) -> &[T] {
        &self.priors
    }

    pub fn leaks(&self) -> &[T] {
        &self.leaks
    }

    pub fn prior(&self, i: usize) -> T {
        self.priors[i]
    }

    pub fn leak(&self, j: usize) -> T {
        self.leaks[j]
    }

    /// Failure of the always-present noise parent, `1 − ν_j`.
    pub fn noise_failure(&self, j: usize) -> T {
        T::one() - self.leaks[j]
    }

    /// `f_{i,j}`, or 1 when `(i, j)` is not an edge.
    pub fn failure(&self, i: usize, j: usize) -> T {
        let row = &self.failures[i];
        match row.binary_search_by_key(&j, |&(s, _)| s) {
            Ok(k) => row[k].1,
            Err(_) => T::one(),
        }
    }

    /// `(symptom, failure)` pairs of disease `i`, sorted by symptom.
    pub fn failures_of(&self, i: usize) -> &[(usize, T)] {
        &self.failures[i]
    }

    pub fn set_prior(&mut self, i: usize, p: T) {
        self.priors[i] = p;
    }

    pub fn set_leak(&mut self, j: usize, leak: T) {
        self.leaks[j] = leak;
    }

    /// Overwrites the failure of an existing edge.
    pub fn set_failure(&mut self, i: usize, j: usize, f: T) -> Result<()> {
        let row = &mut self.failures[i];
        match row.binary_search_by_key(&j, |&(s, _)| s) {
            Ok(k) => {
                row[k].1 = f;
                Ok(())
            }
            Err(_) => Err(Error::InvalidParameters(format!("({i}, {j}) is not an edge"))),
        }
    }

    /// Value of a parameter; `None` if the id does not exist.
    pub fn get(&self, id: ParamId) -> Option<T> {
        match id {
            ParamId::Prior(i) => self.priors.get(i).copied(),
            ParamId::Failure(i, j) => {
                let row = self.failures.get(i)?;
                row.binary_search_by_key(&j, |&(s, _)| s).ok().map(|k| row[k].1)
            }
            ParamId::Leak(j) => self.leaks.get(j).copied(),
        }
    }

    pub fn set(&mut self, id: ParamId, value: T) -> Result<()> {
        match id {
            ParamId::Prior(i) if i < self.priors.len() => self.priors[i] = value,
            ParamId::Failure(i, j) if i < self.failures.len() => return self.set_failure(i, j, value),
            ParamId::Leak(j) if j < self.leaks.len() => self.leaks[j] = value,
            _ => return Err(Error::InvalidParameters(format!("unknown parameter {id}"))),
        }
        Ok(())
    }

    /// Iterates `(disease, symptom, failure)` over all edges in edge order.
    pub fn edge_failures(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.failures
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&(j, f)| (i, j, f)))
    }

    /// Checks that the stored edges are exactly the edges of `structure`.
    pub fn matches(&self, structure: &NetworkStructure) -> bool {
        self.priors.len() == structure.n_diseases()
            && self.leaks.len() == structure.n_symptoms()
            && self
                .failures
                .iter()
                .enumerate()
                .all(|(i, row)| row.iter().map(|&(j, _)| j).eq(structure.children(i).iter().copied()))
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> NoisyOrParameters<U> {
        let c = |x: T| U::lit(x.as_f64());
        NoisyOrParameters {
            priors: self.priors.iter().map(|&p| c(p)).collect(),
            failures: self
                .failures
                .iter()
                .map(|row| row.iter().map(|&(j, f)| (j, c(f))).collect())
                .collect(),
            leaks: self.leaks.iter().map(|&l| c(l)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkStructure {
        NetworkStructure::new(2, 3, [(0, 0), (0, 1), (1, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn failure_lookup_defaults_to_one() {
        let s = small();
        let p = NoisyOrParameters::<f64>::new(
            &s,
            vec![0.3, 0.4],
            [(0, 0, 0.2), (0, 1, 0.5), (1, 1, 0.3), (1, 2, 0.7)],
            vec![0.0, 0.1, 0.0],
        )
        .unwrap();
        assert_eq!(p.failure(0, 1), 0.5);
        assert_eq!(p.failure(0, 2), 1.0);
        assert!((p.noise_failure(1) - 0.9).abs() < 1e-15);
        assert_eq!(p.get(ParamId::Failure(1, 2)), Some(0.7));
        assert_eq!(p.get(ParamId::Failure(1, 0)), None);
        assert!(p.matches(&s));
    }

    #[test]
    fn rejects_mismatched_failures() {
        let s = small();
        // missing edge (1, 2)
        let r = NoisyOrParameters::<f64>::new(&s, vec![0.3, 0.4], [(0, 0, 0.2), (0, 1, 0.5), (1, 1, 0.3)], vec![0.0; 3]);
        assert!(r.is_err());
        let r = NoisyOrParameters::<f64>::new(&s, vec![0.3, 0.4], [(0, 2, 0.2)], vec![0.0; 3]);
        assert!(r.is_err());
        let r = NoisyOrParameters::<f64>::new(&s, vec![1.3, 0.4], [], vec![0.0; 3]);
        assert!(r.is_err());
    }

    #[test]
    fn canonical_ordering() {
        let s = small();
        let ids = all_param_ids(&s, true);
        assert_eq!(ids.len(), 2 + 4 + 3);
        assert_eq!(ids[0], ParamId::Prior(0));
        assert_eq!(ids[2], ParamId::Failure(0, 0));
        assert_eq!(ids[8], ParamId::Leak(2));
        assert_eq!(all_param_ids(&s, false).len(), 6);
    }
}
