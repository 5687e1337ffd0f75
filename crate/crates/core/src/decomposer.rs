//! Closed-form decomposition of a 2×2×2 joint table into a two-component
//! product mixture.
//!
//! With `X₁ = T(0,·,·)` and `X₂ = T(1,·,·)` sliced along one symptom axis,
//! `Y = X₂X₁⁻¹` has eigenvalues `λ_z = P(s=1|z)/P(s=0|z)` for the slicing
//! symptom, and `(X₂ − λ_other X₁)/(±(λ₁ − λ₂))` is the rank-1 slice of each
//! component. Components are labeled so that `Z = 0` has the larger
//! probability of all three symptoms being absent.

use thiserror::Error;

use crate::model::JointTensor;
use crate::scalar::{clip_probability, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecomposeError {
    #[error("decomposition needs a 3-symptom table (got order {0})")]
    Order(usize),
    #[error("slice matrix is singular (condition number {0:e})")]
    SingularSlice(f64),
    #[error("eigenvalues degenerate (discriminant {discriminant:e}); table is close to rank 1")]
    DegenerateEigen { discriminant: f64 },
    #[error("recovered {what} = {value} outside [0, 1]")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("conditional absence probability of symptom {0} is zero")]
    ZeroDenominator(usize),
}

impl DecomposeError {
    pub fn kind(&self) -> &'static str {
        match self {
            DecomposeError::Order(_) => "tensor_order",
            DecomposeError::SingularSlice(_) => "singular_slice",
            DecomposeError::DegenerateEigen { .. } => "degenerate_eigen",
            DecomposeError::OutOfRange { .. } => "out_of_range",
            DecomposeError::ZeroDenominator(_) => "zero_denominator",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecomposeOptions {
    /// Largest accepted condition number of the `X₁` slice.
    pub max_condition: f64,
    /// Smallest accepted eigenvalue gap `λ₁ − λ₂`.
    pub min_gap: f64,
    /// Slack allowed outside `[0, 1]` before clamping recovered values.
    pub range_tol: f64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions { max_condition: 1e6, min_gap: 1e-6, range_tol: 1e-3 }
    }
}

/// Two-component mixture recovered from a triplet table. Arrays are aligned
/// with the tensor's ids.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureResult<T> {
    pub ids: Vec<usize>,
    /// `P(Z = 1)`.
    pub prior: T,
    /// `P(S_j = 0 | Z = 0)`.
    pub cond0: [T; 3],
    /// `P(S_j = 0 | Z = 1)`.
    pub cond1: [T; 3],
    /// Normalized conditional tables `P(s | Z = 0)` and `P(s | Z = 1)`.
    pub component0: JointTensor<T>,
    pub component1: JointTensor<T>,
    /// Tensor axis used for slicing.
    pub axis: usize,
}

impl<T: Scalar> MixtureResult<T> {
    /// `π · component1 + (1 − π) · component0`.
    pub fn reconstruct(&self) -> Vec<T> {
        let pi = self.prior;
        self.component0
            .values()
            .iter()
            .zip(self.component1.values())
            .map(|(&a, &b)| (T::one() - pi) * a + pi * b)
            .collect()
    }
}

type M2<T> = [[T; 2]; 2];

/// Rank-1 factor of a 2×2 matrix, `R ≈ u vᵀ`, pivoting on the entry of
/// largest magnitude.
fn split_rank1<T: Scalar>(r: &M2<T>) -> Option<([T; 2], [T; 2])> {
    let (mut pr, mut pc) = (0, 0);
    for i in 0..2 {
        for j in 0..2 {
            if r[i][j].abs() > r[pr][pc].abs() {
                pr = i;
                pc = j;
            }
        }
    }
    let pivot = r[pr][pc];
    if pivot == T::zero() || !pivot.is_finite() {
        return None;
    }
    let v = r[pr];
    let u = [r[0][pc] / pivot, r[1][pc] / pivot];
    Some((u, v))
}

fn condition_number<T: Scalar>(x: &M2<T>) -> f64 {
    let [[a, b], [c, d]] = x.map(|row| row.map(|v| v.as_f64()));
    let det = a * d - b * c;
    let s = a * a + b * b + c * c + d * d;
    if det == 0.0 {
        return f64::INFINITY;
    }
    let smax2 = 0.5 * (s + (s * s - 4.0 * det * det).max(0.0).sqrt());
    smax2 / det.abs()
}

struct Component<T> {
    mass: T,
    /// absence probability per axis of the permuted tensor
    absent: [T; 3],
    table: Vec<T>,
}

enum AxisFailure {
    Singular(f64),
    Degenerate(f64),
}

/// Decomposes a table whose first axis is the slicing axis.
fn decompose_first_axis<T: Scalar>(
    t: &JointTensor<T>,
    opts: &DecomposeOptions,
) -> Result<Result<[Component<T>; 2], DecomposeError>, AxisFailure> {
    let cell = |a: usize, b: usize, c: usize| t.cell(a | b << 1 | c << 2);
    let x1: M2<T> = [[cell(0, 0, 0), cell(0, 0, 1)], [cell(0, 1, 0), cell(0, 1, 1)]];
    let x2: M2<T> = [[cell(1, 0, 0), cell(1, 0, 1)], [cell(1, 1, 0), cell(1, 1, 1)]];
    let cond = condition_number(&x1);
    if !(cond <= opts.max_condition) {
        return Err(AxisFailure::Singular(cond));
    }
    let det1 = x1[0][0] * x1[1][1] - x1[0][1] * x1[1][0];
    let inv = [[x1[1][1] / det1, -x1[0][1] / det1], [-x1[1][0] / det1, x1[0][0] / det1]];
    let mut y = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            y[i][j] = x2[i][0] * inv[0][j] + x2[i][1] * inv[1][j];
        }
    }
    let tr = y[0][0] + y[1][1];
    let det = y[0][0] * y[1][1] - y[0][1] * y[1][0];
    let disc = tr * tr - T::lit(4.0) * det;
    if !(disc >= T::zero()) {
        return Err(AxisFailure::Degenerate(disc.as_f64()));
    }
    let root = disc.sqrt();
    if root.as_f64() < opts.min_gap {
        return Err(AxisFailure::Degenerate(disc.as_f64()));
    }
    let half = T::lit(0.5);
    let lambdas = [(tr + root) * half, (tr - root) * half];
    let gap = lambdas[0] - lambdas[1];
    let slice = |own: usize| -> M2<T> {
        let other = lambdas[1 - own];
        let sign = if own == 0 { T::one() } else { -T::one() };
        let mut r = [[T::zero(); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] = sign * (x2[i][j] - other * x1[i][j]) / gap;
            }
        }
        r
    };
    let mut comps = Vec::with_capacity(2);
    for z in 0..2 {
        let Some((u, v)) = split_rank1(&slice(z)) else {
            return Err(AxisFailure::Degenerate(disc.as_f64()));
        };
        let l = [T::one(), lambdas[z]];
        let mut table = vec![T::zero(); 8];
        for (x, cell) in table.iter_mut().enumerate() {
            *cell = l[x & 1] * u[x >> 1 & 1] * v[x >> 2 & 1];
        }
        let mass: T = table.iter().copied().sum();
        let absent = [
            l[0] / (l[0] + l[1]),
            u[0] / (u[0] + u[1]),
            v[0] / (v[0] + v[1]),
        ];
        comps.push(Component { mass, absent, table });
    }
    let c1 = comps.pop().unwrap();
    let c0 = comps.pop().unwrap();
    Ok(Ok([c0, c1]))
}

fn in_range<T: Scalar>(x: T, tol: f64) -> bool {
    let x = x.as_f64();
    x >= -tol && x <= 1.0 + tol
}

fn clamp_unit<T: Scalar>(x: T) -> T {
    x.max(T::zero()).min(T::one())
}

/// Largest deviation of `t` from the product of its one-symptom marginals.
fn distance_from_product<T: Scalar>(t: &JointTensor<T>) -> f64 {
    let total: f64 = t.values().iter().map(|v| v.as_f64()).sum();
    let marg: Vec<f64> = (0..3)
        .map(|b| t.values().iter().enumerate().filter(|(x, _)| x >> b & 1 == 0).map(|(_, v)| v.as_f64()).sum::<f64>() / total)
        .collect();
    t.values()
        .iter()
        .enumerate()
        .map(|(x, v)| {
            let prod: f64 = (0..3).map(|b| if x >> b & 1 == 0 { marg[b] } else { 1.0 - marg[b] }).product();
            (v.as_f64() / total - prod).abs()
        })
        .fold(0.0, f64::max)
}

/// Decomposes with the default options.
pub fn decompose_222<T: Scalar>(t: &JointTensor<T>) -> Result<MixtureResult<T>, DecomposeError> {
    decompose_222_with(t, &DecomposeOptions::default())
}

/// Tries each symptom axis in order as the slicing axis and decomposes along
/// the first one whose slice is well conditioned with separated eigenvalues.
pub fn decompose_222_with<T: Scalar>(
    t: &JointTensor<T>,
    opts: &DecomposeOptions,
) -> Result<MixtureResult<T>, DecomposeError> {
    if t.order() != 3 {
        return Err(DecomposeError::Order(t.order()));
    }
    let mut singular = None;
    let mut degenerate = None;
    for axis in 0..3 {
        let order: Vec<usize> = std::iter::once(axis).chain((0..3).filter(|&k| k != axis)).collect();
        let permuted = t.permuted(&order);
        let comps = match decompose_first_axis(&permuted, opts) {
            Ok(result) => result?,
            Err(AxisFailure::Singular(c)) => {
                singular.get_or_insert(c);
                continue;
            }
            Err(AxisFailure::Degenerate(d)) => {
                degenerate.get_or_insert(d);
                continue;
            }
        };
        return finish(t, &order, axis, comps, opts);
    }
    if let Some(d) = degenerate {
        return Err(DecomposeError::DegenerateEigen { discriminant: d });
    }
    // every slice singular: a (near) product table is a degenerate mixture
    if distance_from_product(t) < 1e-6 {
        return Err(DecomposeError::DegenerateEigen { discriminant: 0.0 });
    }
    Err(DecomposeError::SingularSlice(singular.unwrap_or(f64::INFINITY)))
}

fn finish<T: Scalar>(
    t: &JointTensor<T>,
    order: &[usize],
    axis: usize,
    comps: [Component<T>; 2],
    opts: &DecomposeOptions,
) -> Result<MixtureResult<T>, DecomposeError> {
    let tol = opts.range_tol;
    let total = comps[0].mass + comps[1].mass;
    for c in &comps {
        if !in_range(c.mass / total, tol) {
            return Err(DecomposeError::OutOfRange { what: "mixture weight", value: (c.mass / total).as_f64() });
        }
        if let Some(&a) = c.absent.iter().find(|&&a| !in_range(a, tol)) {
            return Err(DecomposeError::OutOfRange { what: "conditional probability", value: a.as_f64() });
        }
    }
    let all_absent = |c: &Component<T>| c.absent.iter().copied().product::<T>();
    let [first, second] = comps;
    let (c0, c1) = if all_absent(&first) >= all_absent(&second) { (first, second) } else { (second, first) };
    // map permuted axes back to the caller's id order
    let unpermute = |absent: &[T; 3]| {
        let mut out = [T::zero(); 3];
        for (k, &orig) in order.iter().enumerate() {
            out[orig] = clamp_unit(absent[k]);
        }
        out
    };
    let inverse: Vec<usize> = (0..3).map(|orig| order.iter().position(|&k| k == orig).unwrap()).collect();
    let table = |c: &Component<T>| {
        let normalized = JointTensor::new(order.iter().map(|&k| t.ids()[k]).collect(), c.table.iter().map(|&v| v / c.mass).collect())
            .expect("valid ids");
        normalized.permuted(&inverse)
    };
    Ok(MixtureResult {
        ids: t.ids().to_vec(),
        prior: clamp_unit(c1.mass / total),
        cond0: unpermute(&c0.absent),
        cond1: unpermute(&c1.absent),
        component0: table(&c0),
        component1: table(&c1),
        axis,
    })
}

/// Noisy-or parameters of the coupling disease of a triplet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletParameters<T> {
    pub prior: T,
    /// Failures aligned with the mixture's ids.
    pub failures: [T; 3],
}

/// `p = π`, `f_j = P(S_j = 0 | Z = 1) / P(S_j = 0 | Z = 0)`, both clipped to
/// `[1e-6, 1 − 1e-6]`.
pub fn noisyor_from_mixture<T: Scalar>(mix: &MixtureResult<T>) -> Result<TripletParameters<T>, DecomposeError> {
    let mut failures = [T::zero(); 3];
    for j in 0..3 {
        if mix.cond0[j].as_f64() < 1e-12 {
            return Err(DecomposeError::ZeroDenominator(mix.ids[j]));
        }
        failures[j] = clip_probability(mix.cond1[j] / mix.cond0[j]);
    }
    Ok(TripletParameters { prior: clip_probability(mix.prior), failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::Pcg;
    use crate::scalar::PROB_CEIL;
    use rand::{Rng, SeedableRng};

    /// Joint table of a two-component product mixture, by enumerating Z.
    fn mixture_table(pi: f64, cond0: [f64; 3], cond1: [f64; 3]) -> JointTensor<f64> {
        let mut cells = vec![0.0; 8];
        for (w, cond) in [(1.0 - pi, cond0), (pi, cond1)] {
            for (x, cell) in cells.iter_mut().enumerate() {
                let lik: f64 = (0..3).map(|b| if x >> b & 1 == 0 { cond[b] } else { 1.0 - cond[b] }).product();
                *cell += w * lik;
            }
        }
        JointTensor::<f64>::new(vec![10, 11, 12], cells).unwrap()
    }

    #[test]
    fn recovers_exact_mixture() {
        let t = mixture_table(0.3, [0.9, 0.8, 0.7], [0.45, 0.4, 0.35]);
        let mix = decompose_222(&t).unwrap();
        assert!((mix.prior - 0.3).abs() < 1e-10);
        for j in 0..3 {
            assert!((mix.cond0[j] - [0.9, 0.8, 0.7][j]).abs() < 1e-10);
            assert!((mix.cond1[j] - [0.45, 0.4, 0.35][j]).abs() < 1e-10);
        }
        let f = noisyor_from_mixture(&mix).unwrap();
        for j in 0..3 {
            assert!((f.failures[j] - 0.5).abs() < 1e-10);
        }
        for (a, b) in mix.reconstruct().iter().zip(t.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_one_tables_are_degenerate() {
        let t = mixture_table(0.0, [0.9, 0.8, 0.7], [0.45, 0.4, 0.35]);
        assert!(matches!(decompose_222(&t), Err(DecomposeError::DegenerateEigen { .. })));
        let t = mixture_table(0.5, [0.6, 0.3, 0.8], [0.6, 0.3, 0.8]);
        assert!(matches!(decompose_222(&t), Err(DecomposeError::DegenerateEigen { .. })));
    }

    #[test]
    fn one_uninformative_axis_is_degenerate() {
        // symptom 0 has the same conditional under both components
        let t = mixture_table(0.4, [0.7, 0.9, 0.8], [0.7, 0.3, 0.2]);
        assert!(matches!(decompose_222(&t), Err(DecomposeError::DegenerateEigen { .. })));
    }

    #[test]
    fn rejects_wrong_order() {
        let t = JointTensor::<f64>::new(vec![0, 1], vec![0.25; 4]).unwrap();
        assert!(matches!(decompose_222(&t), Err(DecomposeError::Order(2))));
    }

    #[test]
    fn out_of_range_is_reported() {
        // heavily perturbed table: valid distribution but not a mixture of products
        let t = JointTensor::<f64>::new(vec![0, 1, 2], vec![0.05, 0.3, 0.02, 0.13, 0.25, 0.05, 0.15, 0.05]).unwrap();
        match decompose_222(&t) {
            Err(DecomposeError::OutOfRange { .. }) | Err(DecomposeError::DegenerateEigen { .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ratio_edge_cases() {
        let t = mixture_table(0.3, [0.9, 0.8, 0.7], [0.45, 0.4, 0.35]);
        let mut mix = decompose_222(&t).unwrap();
        let same = MixtureResult { cond1: mix.cond0, ..mix.clone() };
        let f = noisyor_from_mixture(&same).unwrap();
        assert!(f.failures.iter().all(|&x| x == PROB_CEIL));
        mix.cond1[0] = mix.cond0[0] * 1.02;
        assert_eq!(noisyor_from_mixture(&mix).unwrap().failures[0], PROB_CEIL);
        mix.cond0[2] = 0.0;
        assert!(matches!(noisyor_from_mixture(&mix), Err(DecomposeError::ZeroDenominator(12))));
    }

    fn random_case(rng: &mut Pcg) -> (f64, [f64; 3], [f64; 3]) {
        let pi = rng.gen_range(0.05..0.95);
        let mut c0 = [0.0; 3];
        let mut c1 = [0.0; 3];
        for j in 0..3 {
            let a: f64 = rng.gen_range(0.05..0.95);
            let b: f64 = rng.gen_range(0.05..0.95);
            c0[j] = a.max(b);
            c1[j] = a.min(b);
        }
        (pi, c0, c1)
    }

    #[test]
    fn permutation_consistency() {
        let mut rng = Pcg::seed_from_u64(3);
        for _ in 0..200 {
            let (pi, c0, c1) = random_case(&mut rng);
            if (0..3).any(|j| c0[j] - c1[j] < 0.05) {
                continue;
            }
            let t = mixture_table(pi, c0, c1);
            let base = noisyor_from_mixture(&decompose_222(&t).unwrap()).unwrap();
            for perm in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
                let p = t.permuted(&perm);
                let got = noisyor_from_mixture(&decompose_222(&p).unwrap()).unwrap();
                assert!((got.prior - base.prior).abs() < 1e-9);
                for (k, &orig) in perm.iter().enumerate() {
                    assert!((got.failures[k] - base.failures[orig]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn perturbation_is_linear() {
        let mut rng = Pcg::seed_from_u64(8);
        let t = mixture_table(0.35, [0.85, 0.75, 0.8], [0.3, 0.35, 0.25]);
        let base = decompose_222(&t).unwrap();
        let mut worst: f64 = 0.0;
        for eps in [1e-4, 1e-5, 1e-6] {
            for _ in 0..100 {
                let noisy: Vec<f64> = t.values().iter().map(|v| v + eps * rng.gen_range(-1.0..1.0)).collect();
                let mix = decompose_222(&JointTensor::<f64>::new(t.ids().to_vec(), noisy).unwrap()).unwrap();
                let err = (0..3)
                    .map(|j| (mix.cond0[j] - base.cond0[j]).abs().max((mix.cond1[j] - base.cond1[j]).abs()))
                    .fold((mix.prior - base.prior).abs(), f64::max);
                worst = worst.max(err / eps);
            }
        }
        assert!(worst < 100.0, "amplification {worst}");
    }

    #[test]
    fn works_in_single_precision() {
        let t = mixture_table(0.3, [0.9, 0.8, 0.7], [0.45, 0.4, 0.35]);
        let t32 = JointTensor::<f32>::new(t.ids().to_vec(), t.values().iter().map(|&v| v as f32).collect()).unwrap();
        let mix = decompose_222(&t32).unwrap();
        assert!((mix.prior - 0.3).abs() < 1e-4);
        assert!((mix.cond1[2] - 0.35).abs() < 1e-4);
    }
}
