use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::model::{NetworkStructure, NoisyOrParameters};
use crate::sampler::rng_for;
use crate::scalar::Scalar;

/// How many parents each symptom receives in [`random_structure`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParentCount {
    Fixed(usize),
    /// Inclusive range, drawn uniformly.
    Uniform { lo: usize, hi: usize },
    /// Poisson with the given mean, redrawn until it does not exceed `n`.
    Poisson { mean: f64 },
}

/// Draws a parent set for every symptom, without replacement.
pub fn random_structure(n: usize, m: usize, count: ParentCount, seed: u64) -> Result<NetworkStructure> {
    if n == 0 || m == 0 {
        return Err(Error::InfeasibleDegree("need at least one disease and one symptom".into()));
    }
    let poisson = match count {
        ParentCount::Fixed(k) if k > n => {
            return Err(Error::InfeasibleDegree(format!("{k} parents from {n} diseases")))
        }
        ParentCount::Uniform { lo, hi } if lo > hi || hi > n => {
            return Err(Error::InfeasibleDegree(format!("parent range {lo}..={hi} with {n} diseases")))
        }
        ParentCount::Poisson { mean } if !(mean > 0.0 && mean <= n as f64) => {
            return Err(Error::InfeasibleDegree(format!("mean in-degree {mean} with {n} diseases")))
        }
        ParentCount::Poisson { mean } => Some(Poisson::new(mean).expect("positive mean")),
        _ => None,
    };
    let mut rng = rng_for(seed, 0);
    let mut edges = Vec::new();
    for j in 0..m {
        let k = match count {
            ParentCount::Fixed(k) => k,
            ParentCount::Uniform { lo, hi } => rng.gen_range(lo..=hi),
            ParentCount::Poisson { .. } => loop {
                let k = poisson.as_ref().unwrap().sample(&mut rng) as usize;
                if k <= n {
                    break k;
                }
            },
        };
        edges.extend(sample(&mut rng, n, k).into_iter().map(|i| (i, j)));
    }
    NetworkStructure::new(n, m, edges)
}

/// How disease priors are drawn by [`random_parameters`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorLaw {
    /// Uniform in the parameter range.
    #[default]
    Uniform,
    /// [`zipf_priors`] assigned to diseases in random order.
    Zipf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub seed: u64,
    /// Range for failures, and for priors under [`PriorLaw::Uniform`].
    pub lo: f64,
    pub hi: f64,
    pub leak: f64,
    pub prior_law: PriorLaw,
    pub zipf_exponent: f64,
    pub zipf_top: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            lo: 0.2,
            hi: 0.8,
            leak: 0.01,
            prior_law: PriorLaw::Uniform,
            zipf_exponent: 1.5,
            zipf_top: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.lo
            && self.lo <= self.hi
            && self.hi < 1.0
            && (0.0..1.0).contains(&self.leak)
            && self.zipf_exponent > 0.0
            && 0.0 < self.zipf_top
            && self.zipf_top < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameters(format!("bad generator config {self:?}")))
        }
    }
}

/// Random priors and failures in `[lo, hi]`, every leak equal to
/// `config.leak`. Priors are drawn first, then failures in edge order.
pub fn random_parameters<T: Scalar>(
    structure: &NetworkStructure,
    config: &GeneratorConfig,
) -> Result<NoisyOrParameters<T>> {
    config.validate()?;
    let mut rng = rng_for(config.seed, 1);
    let n = structure.n_diseases();
    let priors: Vec<f64> = match config.prior_law {
        PriorLaw::Uniform => (0..n).map(|_| rng.gen_range(config.lo..=config.hi)).collect(),
        PriorLaw::Zipf => {
            let law = zipf_priors(n, config.zipf_exponent, config.zipf_top);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut priors = vec![0.0; n];
            for (rank, &i) in order.iter().enumerate() {
                priors[i] = law[rank];
            }
            priors
        }
    };
    let failures: Vec<(usize, usize, T)> = structure
        .edges()
        .iter()
        .map(|&(i, j)| (i, j, T::lit(rng.gen_range(config.lo..=config.hi))))
        .collect();
    NoisyOrParameters::new(
        structure,
        priors.into_iter().map(T::lit).collect(),
        failures,
        vec![T::lit(config.leak); structure.n_symptoms()],
    )
}

/// Power-law priors `p_top · (rank + 1)^(−s)` in rank order.
pub fn zipf_priors(n: usize, exponent: f64, top: f64) -> Vec<f64> {
    (0..n).map(|r| top * ((r + 1) as f64).powf(-exponent)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_in_degree_is_complete() {
        let s = random_structure(4, 6, ParentCount::Fixed(4), 1).unwrap();
        assert_eq!(s, NetworkStructure::fully_connected(4, 6));
    }

    #[test]
    fn in_degree_one_is_star_forest() {
        let s = random_structure(5, 40, ParentCount::Fixed(1), 2).unwrap();
        assert!((0..40).all(|j| s.parents(j).len() == 1));
        assert_eq!(s.n_edges(), 40);
    }

    #[test]
    fn poisson_mean_in_degree() {
        let s = random_structure(50, 10_000, ParentCount::Poisson { mean: 2.0 }, 3).unwrap();
        let mean = s.n_edges() as f64 / 10_000.0;
        assert!((mean - 2.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn infeasible_requests() {
        assert!(random_structure(3, 3, ParentCount::Fixed(4), 0).is_err());
        assert!(random_structure(3, 3, ParentCount::Uniform { lo: 2, hi: 5 }, 0).is_err());
        assert!(random_structure(3, 3, ParentCount::Poisson { mean: 4.0 }, 0).is_err());
        assert!(random_structure(0, 3, ParentCount::Fixed(0), 0).is_err());
    }

    #[test]
    fn default_ranges() {
        let s = random_structure(10, 30, ParentCount::Uniform { lo: 1, hi: 4 }, 5).unwrap();
        let p: NoisyOrParameters<f64> = random_parameters(&s, &GeneratorConfig::default()).unwrap();
        assert!(p.priors().iter().all(|&x| (0.2..=0.8).contains(&x)));
        assert!(p.edge_failures().all(|(_, _, f)| (0.2..=0.8).contains(&f)));
        assert!(p.leaks().iter().all(|&l| l == 0.01));
    }

    #[test]
    fn degenerate_range_and_determinism() {
        let s = random_structure(3, 8, ParentCount::Fixed(2), 5).unwrap();
        let cfg = GeneratorConfig { lo: 0.5, hi: 0.5, ..Default::default() };
        let p: NoisyOrParameters<f64> = random_parameters(&s, &cfg).unwrap();
        assert!(p.priors().iter().all(|&x| x == 0.5));
        assert!(p.edge_failures().all(|(_, _, f)| f == 0.5));
        let cfg = GeneratorConfig { seed: 77, ..Default::default() };
        let a: NoisyOrParameters<f64> = random_parameters(&s, &cfg).unwrap();
        let b: NoisyOrParameters<f64> = random_parameters(&s, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(random_parameters::<f64>(&s, &GeneratorConfig { lo: 0.9, hi: 0.1, ..Default::default() }).is_err());
    }

    #[test]
    fn zipf_law() {
        assert_eq!(zipf_priors(1, 1.5, 0.1), vec![0.1]);
        let z = zipf_priors(20, 1.5, 0.1);
        assert!(z.windows(2).all(|w| w[0] >= w[1]));
        assert!((z[0] / z[1] - 2f64.powf(1.5)).abs() < 1e-12);
        let s = random_structure(20, 5, ParentCount::Fixed(3), 1).unwrap();
        let cfg = GeneratorConfig { prior_law: PriorLaw::Zipf, ..Default::default() };
        let p: NoisyOrParameters<f64> = random_parameters(&s, &cfg).unwrap();
        let mut got = p.priors().to_vec();
        got.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_eq!(got, z);
    }
}
