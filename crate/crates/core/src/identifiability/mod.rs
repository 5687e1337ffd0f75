//! Local identifiability by the rank of the moment map's Jacobian, and the
//! clean-up grid search for a residual pair of parents.

mod cleanup;

pub use cleanup::{
    cleanup_grid_search, cleanup_grid_search_with, cleanup_request, find_anchor, residual_objective, AdjustedSource, CleanupAnchor, CleanupOptions,
    CleanupResult,
};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::model::{all_param_ids, negative_moment_exact, NetworkStructure, NoisyOrParameters, ParamId};
use crate::sampler::{derive_seed, random_parameters, rng_for, GeneratorConfig};

/// Subsets (ordered by size, then lexicographically) and the parameter
/// vector layout of a moment map.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMapSpec {
    pub structure: NetworkStructure,
    pub max_order: usize,
    pub subsets: Vec<Vec<usize>>,
    /// Priors, then edge failures, then leaks when included.
    pub params: Vec<ParamId>,
    /// Number of subsets of size at most `k`, for `k = 0..=max_order`.
    pub prefix: Vec<usize>,
}

fn combinations(m: usize, k: usize, out: &mut Vec<Vec<usize>>) {
    fn go(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..m {
            if m - j < k - cur.len() {
                break;
            }
            cur.push(j);
            go(j + 1, m, k, cur, out);
            cur.pop();
        }
    }
    go(0, m, k, &mut Vec::with_capacity(k), out);
}

impl MomentMapSpec {
    pub fn new(structure: &NetworkStructure, max_order: usize, include_leaks: bool) -> Self {
        let max_order = max_order.min(structure.n_symptoms());
        let mut subsets = Vec::new();
        let mut prefix = vec![0];
        for k in 1..=max_order {
            combinations(structure.n_symptoms(), k, &mut subsets);
            prefix.push(subsets.len());
        }
        MomentMapSpec {
            structure: structure.clone(),
            max_order,
            subsets,
            params: all_param_ids(structure, include_leaks),
            prefix,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }
}

/// `M̄_U` for every subset in `spec.subsets`, in order.
pub fn moment_map(spec: &MomentMapSpec, params: &NoisyOrParameters<f64>) -> Vec<f64> {
    spec.subsets
        .iter()
        .map(|u| negative_moment_exact(&spec.structure, params, u).expect("subsets are valid"))
        .collect()
}

/// Central-difference Jacobian of the moment map, one column per parameter.
pub fn numeric_jacobian(spec: &MomentMapSpec, params: &NoisyOrParameters<f64>, h: f64) -> DMatrix<f64> {
    let columns: Vec<Vec<f64>> = spec
        .params
        .par_iter()
        .map(|&id| {
            let x = params.get(id).expect("parameter exists");
            let mut plus = params.clone();
            plus.set(id, x + h).expect("edge exists");
            let mut minus = params.clone();
            minus.set(id, x - h).expect("edge exists");
            moment_map(spec, &plus).iter().zip(moment_map(spec, &minus)).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        })
        .collect();
    DMatrix::from_fn(spec.subsets.len(), spec.params.len(), |r, c| columns[c][r])
}

/// Numerical rank with threshold `rel_tol · σ_max`.
pub fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentifiabilityOptions {
    pub max_order: usize,
    pub trials: usize,
    pub seed: u64,
    pub include_leaks: bool,
    pub step: f64,
    pub rank_tol: f64,
}

impl Default for IdentifiabilityOptions {
    fn default() -> Self {
        IdentifiabilityOptions { max_order: usize::MAX, trials: 3, seed: 0, include_leaks: true, step: 1e-6, rank_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OrderResult {
    pub order: usize,
    pub rank: usize,
    pub n_params: usize,
    pub n_constraints: usize,
    pub full_rank: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdentifiabilityVerdict {
    pub orders: Vec<OrderResult>,
    /// Smallest order with a full-rank Jacobian, or −1.
    pub minimal_order: i64,
}

/// A random parameter point with every value in `[0.1, 0.9]`.
pub fn random_point(structure: &NetworkStructure, seed: u64) -> NoisyOrParameters<f64> {
    let cfg = GeneratorConfig { seed, lo: 0.1, hi: 0.9, leak: 0.0, ..Default::default() };
    let mut p = random_parameters::<f64>(structure, &cfg).expect("valid config");
    let mut rng = rng_for(seed, 2);
    for j in 0..structure.n_symptoms() {
        p.set_leak(j, rng.gen_range(0.1..0.9));
    }
    p
}

/// Jacobian ranks of the moment map restricted to subsets of size `≤ k`, for
/// every order `k` up to the budget; an order counts as identifying if any
/// trial reaches full column rank.
pub fn check_identifiability(structure: &NetworkStructure, opts: &IdentifiabilityOptions) -> IdentifiabilityVerdict {
    let spec = MomentMapSpec::new(structure, opts.max_order, opts.include_leaks);
    let trials = opts.trials.max(1);
    let mut ranks = vec![0usize; spec.max_order + 1];
    for t in 0..trials {
        let mut point = random_point(structure, derive_seed(opts.seed, t as u64));
        if !opts.include_leaks {
            for j in 0..structure.n_symptoms() {
                point.set_leak(j, 0.0);
            }
        }
        let jac = numeric_jacobian(&spec, &point, opts.step);
        for k in 1..=spec.max_order {
            let rows = jac.rows(0, spec.prefix[k]).into_owned();
            ranks[k] = ranks[k].max(numeric_rank(&rows, opts.rank_tol));
        }
    }
    let orders: Vec<OrderResult> = (1..=spec.max_order)
        .map(|k| OrderResult {
            order: k,
            rank: ranks[k],
            n_params: spec.n_params(),
            n_constraints: spec.prefix[k],
            full_rank: ranks[k] == spec.n_params(),
        })
        .collect();
    let minimal_order = orders.iter().find(|o| o.full_rank).map_or(-1, |o| o.order as i64);
    IdentifiabilityVerdict { orders, minimal_order }
}

/// Minimal identifying order of fully connected networks, `rows[n-1][m-1]`.
pub fn identifiability_table(max_n: usize, max_m: usize, opts: &IdentifiabilityOptions) -> Vec<Vec<i64>> {
    let cells: Vec<(usize, usize)> = (1..=max_n).flat_map(|n| (1..=max_m).map(move |m| (n, m))).collect();
    let values: Vec<i64> = cells
        .par_iter()
        .map(|&(n, m)| check_identifiability(&NetworkStructure::fully_connected(n, m), opts).minimal_order)
        .collect();
    values.chunks(max_m).map(<[i64]>::to_vec).collect()
}

/// CSV with one row per disease count and one column per symptom count.
pub fn table_csv(table: &[Vec<i64>]) -> String {
    let width = table.first().map_or(0, Vec::len);
    let mut out = String::from("n");
    for m in 1..=width {
        out.push_str(&format!(",{m}"));
    }
    out.push('\n');
    for (n, row) in table.iter().enumerate() {
        out.push_str(&(n + 1).to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::fig1;

    #[test]
    fn single_entry_map() {
        let s = NetworkStructure::new(1, 1, [(0, 0)]).unwrap();
        let p = NoisyOrParameters::<f64>::new(&s, vec![0.3], [(0, 0, 0.4)], vec![0.0]).unwrap();
        let spec = MomentMapSpec::new(&s, 1, true);
        assert_eq!(spec.subsets, vec![vec![0]]);
        assert_eq!(spec.params, vec![ParamId::Prior(0), ParamId::Failure(0, 0), ParamId::Leak(0)]);
        let v = moment_map(&spec, &p);
        // absent iff disease absent, or present and failing
        assert!((v[0] - (0.7 + 0.3 * 0.4)).abs() < 1e-15);
    }

    #[test]
    fn zero_priors_leave_leaks() {
        let s = fig1();
        let mut p = NoisyOrParameters::<f64>::uniform(&s, 0.0, 0.3, 0.0);
        for j in 0..5 {
            p.set_leak(j, 0.1 * (j + 1) as f64);
        }
        let spec = MomentMapSpec::new(&s, 3, true);
        for (u, v) in spec.subsets.iter().zip(moment_map(&spec, &p)) {
            let want: f64 = u.iter().map(|&j| 1.0 - 0.1 * (j + 1) as f64).product();
            assert!((v - want).abs() < 1e-15);
        }
    }

    #[test]
    fn subsets_are_canonical() {
        let spec = MomentMapSpec::new(&NetworkStructure::fully_connected(1, 4), 4, true);
        assert_eq!(spec.prefix, vec![0, 4, 10, 14, 15]);
        assert_eq!(spec.subsets[4], vec![0, 1]);
        assert_eq!(spec.subsets[14], vec![0, 1, 2, 3]);
        assert!(spec.subsets.iter().all(|u| u.windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn jacobian_matches_extrapolation() {
        let s = fig1();
        let p = random_point(&s, 5);
        let spec = MomentMapSpec::new(&s, 3, true);
        let j = numeric_jacobian(&spec, &p, 1e-6);
        let coarse = numeric_jacobian(&spec, &p, 1e-3);
        let fine = numeric_jacobian(&spec, &p, 5e-4);
        let richardson = (fine * 4.0 - coarse) / 3.0;
        assert!((j - richardson).abs().max() < 1e-5);
    }

    #[test]
    fn rank_is_monotone_in_order() {
        let v = check_identifiability(&NetworkStructure::fully_connected(2, 5), &IdentifiabilityOptions::default());
        assert!(v.orders.windows(2).all(|w| w[0].rank <= w[1].rank && (!w[0].full_rank || w[1].full_rank)));
    }

    #[test]
    fn small_table_cells() {
        let opts = IdentifiabilityOptions::default();
        let order = |n, m| check_identifiability(&NetworkStructure::fully_connected(n, m), &opts).minimal_order;
        assert_eq!(order(1, 3), 3);
        assert_eq!(order(1, 2), -1);
        assert_eq!(order(2, 4), 3);
        for seed in 1..4 {
            let o = IdentifiabilityOptions { seed, ..opts };
            assert_eq!(check_identifiability(&NetworkStructure::fully_connected(1, 5), &o).minimal_order, 3);
        }
    }

    #[test]
    fn leak_toggle_changes_counts() {
        let o = IdentifiabilityOptions { include_leaks: false, ..Default::default() };
        let v = check_identifiability(&NetworkStructure::fully_connected(1, 3), &o);
        assert_eq!(v.orders[0].n_params, 4);
        assert_eq!(v.minimal_order, 2);
    }

    #[test]
    fn csv_layout() {
        assert_eq!(table_csv(&[vec![-1, 3], vec![-1, -1]]), "n,1,2\n1,-1,3\n2,-1,-1\n");
    }
}
