//! Exact semantics of a bipartite noisy-or network: influences, negative
//! moments, and joint tables over small symptom sets.

mod io;
mod params;
pub mod presets;
mod structure;
mod tensor;

pub use io::{read_network, write_network, NetworkFile};
pub use params::{all_param_ids, observable_param_ids, NoisyOrParameters, ParamId};
pub use structure::NetworkStructure;
pub use tensor::{
    joint_from_negmoments, joint_to_negmoments, JointTensor, NegativeMoments, DEFAULT_NEGATIVE_TOL,
    MAX_MOMENT_ORDER, MAX_TENSOR_ORDER,
};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A cause of symptoms: a disease or the always-present noise parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parent {
    Disease(usize),
    Noise,
}

/// `I_{i,S} = 1 − p_i + p_i ∏_{j∈S} f_{i,j}`; for the noise parent the
/// product of `1 − ν_j`.
pub fn influence<T: Scalar>(params: &NoisyOrParameters<T>, parent: Parent, symptoms: &[usize]) -> Result<T> {
    if symptoms.is_empty() {
        return Err(Error::EmptySymptomSet);
    }
    if let Some(&j) = symptoms.iter().find(|&&j| j >= params.n_symptoms()) {
        return Err(Error::InvalidSymptomSet(vec![j]));
    }
    match parent {
        Parent::Noise => Ok(symptoms.iter().map(|&j| params.noise_failure(j)).product()),
        Parent::Disease(i) => {
            if i >= params.n_diseases() {
                return Err(Error::InvalidDisease(i));
            }
            Ok(disease_influence(params, i, symptoms))
        }
    }
}

pub(crate) fn disease_influence<T: Scalar>(params: &NoisyOrParameters<T>, i: usize, symptoms: &[usize]) -> T {
    let p = params.prior(i);
    let prod: T = symptoms.iter().map(|&j| params.failure(i, j)).product();
    T::one() - p + p * prod
}

/// `M̄_S`: probability that every symptom in `S` is absent.
pub fn negative_moment_exact<T: Scalar>(
    structure: &NetworkStructure,
    params: &NoisyOrParameters<T>,
    symptoms: &[usize],
) -> Result<T> {
    structure.check_symptoms(symptoms)?;
    let noise: T = symptoms.iter().map(|&j| params.noise_failure(j)).product();
    let diseases: T = structure
        .parents_of_set(symptoms)
        .into_iter()
        .map(|i| disease_influence(params, i, symptoms))
        .product();
    Ok(noise * diseases)
}

/// Negative moments of every subset of `ids`.
pub fn negative_moments_exact<T: Scalar>(
    structure: &NetworkStructure,
    params: &NoisyOrParameters<T>,
    ids: &[usize],
) -> Result<NegativeMoments<T>> {
    structure.check_symptoms(ids)?;
    NegativeMoments::from_fn(ids.to_vec(), |u| negative_moment_exact(structure, params, u))
}

/// Exact joint table over at most three symptoms.
pub fn joint_exact<T: Scalar>(
    structure: &NetworkStructure,
    params: &NoisyOrParameters<T>,
    symptoms: &[usize],
) -> Result<JointTensor<T>> {
    if symptoms.len() > MAX_TENSOR_ORDER {
        return Err(Error::TensorOrder(symptoms.len()));
    }
    joint_from_negmoments(&negative_moments_exact(structure, params, symptoms)?)
}

/// Joint table by summing over all configurations of the parents of `S`.
/// Exponential in the parent count; intended for small networks.
pub fn joint_by_enumeration<T: Scalar>(
    structure: &NetworkStructure,
    params: &NoisyOrParameters<T>,
    symptoms: &[usize],
) -> Result<JointTensor<T>> {
    structure.check_symptoms(symptoms)?;
    if symptoms.len() > MAX_TENSOR_ORDER {
        return Err(Error::TensorOrder(symptoms.len()));
    }
    let parents = structure.parents_of_set(symptoms);
    if parents.len() > 24 {
        return Err(Error::EnumerationCap { cap: 24, got: parents.len() });
    }
    let mut cells = vec![T::zero(); 1 << symptoms.len()];
    for config in 0..1usize << parents.len() {
        let mut weight = T::one();
        for (b, &i) in parents.iter().enumerate() {
            let p = params.prior(i);
            weight = weight * if config >> b & 1 == 1 { p } else { T::one() - p };
        }
        // probability each symptom is absent under this configuration
        let absent: Vec<T> = symptoms
            .iter()
            .map(|&j| {
                let mut q = params.noise_failure(j);
                for (b, &i) in parents.iter().enumerate() {
                    if config >> b & 1 == 1 {
                        q = q * params.failure(i, j);
                    }
                }
                q
            })
            .collect();
        for (x, cell) in cells.iter_mut().enumerate() {
            let lik: T = absent
                .iter()
                .enumerate()
                .map(|(b, &q)| if x >> b & 1 == 1 { T::one() - q } else { q })
                .product();
            *cell = *cell + weight * lik;
        }
    }
    JointTensor::new(symptoms.to_vec(), cells)
}

/// Quantities that govern the difficulty of learning a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDiagnostics<T> {
    pub p_min: Option<T>,
    pub p_max: Option<T>,
    /// Largest edge failure.
    pub f_max: Option<T>,
    /// Smallest single-symptom absence probability.
    pub moment_min: Option<T>,
    /// Largest symptom in-degree, noise parent excluded.
    pub max_in_degree: usize,
}

pub fn diagnostics<T: Scalar>(structure: &NetworkStructure, params: &NoisyOrParameters<T>) -> NetworkDiagnostics<T> {
    let fold = |it: &mut dyn Iterator<Item = T>, pick_max: bool| {
        it.reduce(|a, b| if (b > a) == pick_max { b } else { a })
    };
    let moment_min = (0..structure.n_symptoms())
        .map(|j| negative_moment_exact(structure, params, &[j]).expect("valid symptom"))
        .reduce(T::min);
    NetworkDiagnostics {
        p_min: fold(&mut params.priors().iter().copied(), false),
        p_max: fold(&mut params.priors().iter().copied(), true),
        f_max: fold(&mut params.edge_failures().map(|(_, _, f)| f), true),
        moment_min,
        max_in_degree: structure.max_in_degree(),
    }
}
