//! Generative sampling and synthetic network generation.
//!
//! All randomness comes from [`Pcg`] (PCG XSL-RR 128/64 from `rand_pcg`
//! 0.3). Rows are produced in fixed-size chunks; chunk `k` of a run with
//! seed `s` uses a generator seeded with [`derive_seed`]`(s, k)`, so output
//! does not depend on the number of worker threads.

mod batch;
mod generate;

pub use batch::{read_samples, SampleBatch, PACKED_MAGIC};
pub use generate::{random_parameters, random_structure, zipf_priors, GeneratorConfig, ParentCount, PriorLaw};

use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::model::{NetworkStructure, NoisyOrParameters};
use crate::scalar::Scalar;

/// Pinned pseudo-random generator.
pub type Pcg = rand_pcg::Pcg64;

/// Rows generated per independently seeded chunk.
pub const CHUNK_ROWS: usize = 4096;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `index` of `seed`:
/// `splitmix64(seed ^ splitmix64(index))`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

pub fn rng_for(seed: u64, index: u64) -> Pcg {
    Pcg::seed_from_u64(derive_seed(seed, index))
}

/// Draws `n_rows` i.i.d. observations: diseases from their priors, each
/// present disease's edges fire with probability `1 − f`, the leak fires
/// with probability `ν`, and a symptom is on if anything fired.
pub fn draw_samples<T: Scalar>(
    structure: &NetworkStructure,
    params: &NoisyOrParameters<T>,
    n_rows: usize,
    seed: u64,
) -> SampleBatch {
    let priors: Vec<f64> = params.priors().iter().map(|p| p.as_f64()).collect();
    let failures: Vec<Vec<(usize, f64)>> = (0..structure.n_diseases())
        .map(|i| params.failures_of(i).iter().map(|&(j, f)| (j, f.as_f64())).collect())
        .collect();
    let leaks: Vec<(usize, f64)> = params
        .leaks()
        .iter()
        .enumerate()
        .filter(|(_, l)| **l > T::zero())
        .map(|(j, l)| (j, l.as_f64()))
        .collect();
    let m = structure.n_symptoms();
    let n_chunks = n_rows.div_ceil(CHUNK_ROWS);
    let chunks: Vec<SampleBatch> = (0..n_chunks)
        .into_par_iter()
        .map(|k| {
            let rows = CHUNK_ROWS.min(n_rows - k * CHUNK_ROWS);
            let mut rng = rng_for(seed, k as u64);
            let mut batch = SampleBatch::with_capacity(m, rows);
            for _ in 0..rows {
                let row = batch.push_zero_row();
                for (i, &p) in priors.iter().enumerate() {
                    if rng.gen::<f64>() < p {
                        for &(j, f) in &failures[i] {
                            if rng.gen::<f64>() >= f {
                                row[j / 64] |= 1 << (j % 64);
                            }
                        }
                    }
                }
                for &(j, l) in &leaks {
                    if rng.gen::<f64>() < l {
                        row[j / 64] |= 1 << (j % 64);
                    }
                }
            }
            batch
        })
        .collect();
    SampleBatch::concat(m, chunks)
}
