//! Maximum likelihood by EM with exact posteriors, enumerating every
//! disease configuration. Only for small networks.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{NetworkStructure, NoisyOrParameters};
use crate::sampler::{derive_seed, random_parameters, rng_for, GeneratorConfig, SampleBatch};
use crate::scalar::{clip_leak, clip_probability, Scalar};

/// Largest disease count handled by enumeration.
pub const MAX_EM_DISEASES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace<T> {
    /// Average log-likelihood before the first update and after each one.
    pub loglik: Vec<T>,
    pub params: NoisyOrParameters<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> EmTrace<T> {
    pub fn final_loglik(&self) -> T {
        *self.loglik.last().expect("trace holds the initial value")
    }

    /// True if no step lowered the log-likelihood by more than `tol`.
    pub fn is_monotone(&self, tol: T) -> bool {
        self.loglik.windows(2).all(|w| w[1] >= w[0] - tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Stop once the average log-likelihood gains less than this.
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { max_iters: 1000, tol: 1e-10 }
    }
}

/// Distinct rows with their multiplicities, in a fixed order.
struct Patterns {
    rows: Vec<(Vec<bool>, u64)>,
    total: u64,
}

impl Patterns {
    fn new(batch: &SampleBatch) -> Self {
        let mut counts: BTreeMap<&[u64], u64> = BTreeMap::new();
        for row in batch.rows() {
            *counts.entry(row).or_default() += 1;
        }
        let m = batch.n_symptoms();
        let rows = counts
            .into_iter()
            .map(|(words, c)| ((0..m).map(|j| words[j / 64] >> (j % 64) & 1 == 1).collect(), c))
            .collect();
        Patterns { rows, total: batch.len() as u64 }
    }
}

fn check(structure: &NetworkStructure, params: &NoisyOrParameters<impl Scalar>, batch: &SampleBatch) -> Result<()> {
    if structure.n_diseases() > MAX_EM_DISEASES {
        return Err(Error::EnumerationCap { cap: MAX_EM_DISEASES, got: structure.n_diseases() });
    }
    if !params.matches(structure) {
        return Err(Error::StructureMismatch);
    }
    if batch.n_symptoms() != structure.n_symptoms() {
        return Err(Error::RowWidth { expected: structure.n_symptoms(), got: batch.n_symptoms() });
    }
    if batch.is_empty() {
        return Err(Error::NoSamples);
    }
    Ok(())
}

/// Per-configuration absence probabilities `Q_j(d)` for every symptom.
fn absence<T: Scalar>(structure: &NetworkStructure, params: &NoisyOrParameters<T>, d: usize) -> Vec<T> {
    (0..structure.n_symptoms())
        .map(|j| {
            structure
                .parents(j)
                .iter()
                .filter(|&&i| d >> i & 1 == 1)
                .map(|&i| params.failure(i, j))
                .fold(params.noise_failure(j), |acc, f| acc * f)
        })
        .collect()
}

fn log_prior<T: Scalar>(params: &NoisyOrParameters<T>, d: usize) -> T {
    params
        .priors()
        .iter()
        .enumerate()
        .map(|(i, &p)| if d >> i & 1 == 1 { p.ln() } else { (T::one() - p).ln() })
        .sum()
}

struct Tables<T> {
    log_prior: Vec<T>,
    absence: Vec<Vec<T>>,
}

impl<T: Scalar> Tables<T> {
    fn new(structure: &NetworkStructure, params: &NoisyOrParameters<T>) -> Self {
        let configs = 1usize << structure.n_diseases();
        Tables {
            log_prior: (0..configs).map(|d| log_prior(params, d)).collect(),
            absence: (0..configs).map(|d| absence(structure, params, d)).collect(),
        }
    }

    /// `log p(d, s)` for every configuration `d`.
    fn joint(&self, row: &[bool]) -> Vec<T> {
        self.log_prior
            .iter()
            .zip(&self.absence)
            .map(|(&lp, q)| {
                lp + row
                    .iter()
                    .zip(q)
                    .map(|(&s, &q)| if s { (T::one() - q).ln() } else { q.ln() })
                    .sum::<T>()
            })
            .collect()
    }
}

fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

/// Mean over rows of `log p(row)`, summing over all `2^n` configurations.
pub fn loglik_exact<T: Scalar>(structure: &NetworkStructure, params: &NoisyOrParameters<T>, batch: &SampleBatch) -> Result<T> {
    check(structure, params, batch)?;
    let patterns = Patterns::new(batch);
    Ok(average_loglik(structure, params, &patterns))
}

fn average_loglik<T: Scalar>(structure: &NetworkStructure, params: &NoisyOrParameters<T>, patterns: &Patterns) -> T {
    let tables = Tables::new(structure, params);
    let per: Vec<T> = patterns
        .rows
        .par_iter()
        .map(|(row, c)| log_sum_exp(&tables.joint(row)) * T::lit(*c as f64))
        .collect();
    per.into_iter().sum::<T>() / T::lit(patterns.total as f64)
}

/// Expected sufficient statistics of one EM step, and the log-likelihood of
/// the parameters they were computed under.
struct Expected<T> {
    present: Vec<T>,
    /// aligned with `structure.edges()`
    edge_failed: Vec<T>,
    noise_failed: Vec<T>,
    loglik: T,
}

fn e_step<T: Scalar>(structure: &NetworkStructure, params: &NoisyOrParameters<T>, patterns: &Patterns) -> Expected<T> {
    let (n, m) = (structure.n_diseases(), structure.n_symptoms());
    let tables = Tables::new(structure, params);
    let edges = structure.edges();
    let per: Vec<Expected<T>> = patterns
        .rows
        .par_iter()
        .map(|(row, c)| {
            let c = T::lit(*c as f64);
            let joint = tables.joint(row);
            let z = log_sum_exp(&joint);
            let mut e = Expected {
                present: vec![T::zero(); n],
                edge_failed: vec![T::zero(); edges.len()],
                noise_failed: vec![T::zero(); m],
                loglik: z * c,
            };
            for (d, &lj) in joint.iter().enumerate() {
                let w = (lj - z).exp() * c;
                if w == T::zero() {
                    continue;
                }
                let q = &tables.absence[d];
                // probability that a given cause failed, given the symptom state
                let failed = |j: usize, f: T| if row[j] { T::one() - (T::one() - f) / (T::one() - q[j]) } else { T::one() };
                for (i, slot) in e.present.iter_mut().enumerate() {
                    if d >> i & 1 == 1 {
                        *slot = *slot + w;
                    }
                }
                for (k, &(i, j)) in edges.iter().enumerate() {
                    if d >> i & 1 == 1 {
                        e.edge_failed[k] = e.edge_failed[k] + w * failed(j, params.failure(i, j));
                    }
                }
                for j in 0..m {
                    e.noise_failed[j] = e.noise_failed[j] + w * failed(j, params.noise_failure(j));
                }
            }
            e
        })
        .collect();
    let mut total = Expected {
        present: vec![T::zero(); n],
        edge_failed: vec![T::zero(); edges.len()],
        noise_failed: vec![T::zero(); m],
        loglik: T::zero(),
    };
    for e in per {
        let add = |a: &mut Vec<T>, b: &[T]| a.iter_mut().zip(b).for_each(|(x, &y)| *x = *x + y);
        add(&mut total.present, &e.present);
        add(&mut total.edge_failed, &e.edge_failed);
        add(&mut total.noise_failed, &e.noise_failed);
        total.loglik = total.loglik + e.loglik;
    }
    total
}

fn m_step<T: Scalar>(structure: &NetworkStructure, e: &Expected<T>, n_rows: u64) -> NoisyOrParameters<T> {
    let n = T::lit(n_rows as f64);
    let priors = e.present.iter().map(|&x| clip_probability(x / n)).collect();
    let failures = structure.edges().iter().zip(&e.edge_failed).map(|(&(i, j), &f)| {
        let present = e.present[i];
        let v = if present > T::zero() { f / present } else { T::one() };
        (i, j, clip_probability(v))
    });
    let leaks = e.noise_failed.iter().map(|&f| clip_leak(T::one() - f / n)).collect();
    NoisyOrParameters::new(structure, priors, failures, leaks).expect("shape follows the structure")
}

/// EM from `init` until the average log-likelihood gain drops below `tol`
/// or `max_iters` updates have run.
pub fn em_fit<T: Scalar>(
    structure: &NetworkStructure,
    batch: &SampleBatch,
    init: &NoisyOrParameters<T>,
    opts: &EmOptions,
) -> Result<EmTrace<T>> {
    check(structure, init, batch)?;
    let patterns = Patterns::new(batch);
    let n = T::lit(patterns.total as f64);
    let mut params = init.clone();
    let mut loglik = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let e = e_step(structure, &params, &patterns);
        let ll = e.loglik / n;
        if let Some(&prev) = loglik.last() {
            if (ll - prev).as_f64() < opts.tol {
                loglik.push(ll);
                converged = true;
                break;
            }
        }
        loglik.push(ll);
        if iterations == opts.max_iters {
            break;
        }
        params = m_step(structure, &e, patterns.total);
        iterations += 1;
    }
    // the last pushed value belongs to `params`; a converged run ends with
    // one update whose gain fell below tolerance
    Ok(EmTrace { loglik, params, iterations, converged })
}

/// Random starting point: every prior, failure and leak uniform in
/// `[0.2, 0.8]`.
pub fn random_init<T: Scalar>(structure: &NetworkStructure, seed: u64) -> NoisyOrParameters<T> {
    let cfg = GeneratorConfig { seed, lo: 0.2, hi: 0.8, leak: 0.0, ..Default::default() };
    let mut p = random_parameters::<T>(structure, &cfg).expect("valid config");
    let mut rng = rng_for(seed, 2);
    for j in 0..structure.n_symptoms() {
        p.set_leak(j, T::lit(rng.gen_range(0.2..0.8)));
    }
    p
}

/// Best final log-likelihood over `inits` random starts.
pub fn em_best_of<T: Scalar>(
    structure: &NetworkStructure,
    batch: &SampleBatch,
    inits: usize,
    seed: u64,
    opts: &EmOptions,
) -> Result<(EmTrace<T>, Vec<EmTrace<T>>)> {
    let traces: Vec<EmTrace<T>> = (0..inits.max(1) as u64)
        .into_par_iter()
        .map(|k| em_fit(structure, batch, &random_init::<T>(structure, derive_seed(seed, k)), opts))
        .collect::<Result<_>>()?;
    let best = traces
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.final_loglik().partial_cmp(&b.1.final_loglik()).unwrap().then(b.0.cmp(&a.0)))
        .map(|(k, _)| k)
        .unwrap();
    Ok((traces[best].clone(), traces))
}
