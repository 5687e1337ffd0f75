//! Joint tables over at most three symptoms and their subset-indexed
//! negative moments, with the inclusion–exclusion transforms between them.
//!
//! Both containers index by bitmask relative to their `ids`: bit `b` refers
//! to `ids[b]`. In a joint table a set bit means the symptom is present; in
//! a negative-moment table a set bit means the symptom belongs to the subset.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest order of a dense joint table.
pub const MAX_TENSOR_ORDER: usize = 3;

/// Largest subset universe for negative moments.
pub const MAX_MOMENT_ORDER: usize = 20;

/// Tolerance below zero tolerated in cells produced from negative moments.
pub const DEFAULT_NEGATIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct JointTensor<T> {
    ids: Vec<usize>,
    values: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeMoments<T> {
    ids: Vec<usize>,
    values: Vec<T>,
}

fn check_ids(ids: &[usize], cap: usize) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::EmptySymptomSet);
    }
    if ids.len() > cap {
        return Err(Error::TensorOrder(ids.len()));
    }
    for (k, j) in ids.iter().enumerate() {
        if ids[..k].contains(j) {
            return Err(Error::InvalidSymptomSet(ids.to_vec()));
        }
    }
    Ok(())
}

impl<T: Scalar> JointTensor<T> {
    /// Wraps `2^|ids|` cell probabilities.
    pub fn new(ids: Vec<usize>, values: Vec<T>) -> Result<Self> {
        check_ids(&ids, MAX_TENSOR_ORDER)?;
        if values.len() != 1 << ids.len() {
            return Err(Error::Format(format!(
                "{} cells for a table over {} symptoms",
                values.len(),
                ids.len()
            )));
        }
        Ok(JointTensor { ids, values })
    }

    /// Normalizes integer counts by their total.
    pub fn from_counts(ids: Vec<usize>, counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::NoSamples);
        }
        let n = T::lit(total as f64);
        Self::new(ids, counts.iter().map(|&c| T::lit(c as f64) / n).collect())
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn order(&self) -> usize {
        self.ids.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Probability of the outcome whose bit `b` is the state of `ids[b]`.
    pub fn cell(&self, outcome: usize) -> T {
        self.values[outcome]
    }

    pub fn total(&self) -> T {
        self.values.iter().copied().sum()
    }

    /// Reorders the symptom axes: axis `k` of the result is axis `order[k]`
    /// of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let r = self.order();
        assert!(order.len() == r, "permutation length mismatch");
        let ids = order.iter().map(|&k| self.ids[k]).collect();
        let mut values = vec![T::zero(); self.values.len()];
        for (x, v) in values.iter_mut().enumerate() {
            let mut src = 0;
            for (k, &axis) in order.iter().enumerate() {
                if x >> k & 1 == 1 {
                    src |= 1 << axis;
                }
            }
            *v = self.values[src];
        }
        JointTensor { ids, values }
    }
}

impl<T: Scalar> NegativeMoments<T> {
    /// Wraps `2^|ids|` subset moments; entry 0 (the empty set) must be 1.
    pub fn new(ids: Vec<usize>, values: Vec<T>) -> Result<Self> {
        check_ids(&ids, MAX_MOMENT_ORDER)?;
        if values.len() != 1 << ids.len() {
            return Err(Error::Format(format!(
                "{} moments for {} symptoms",
                values.len(),
                ids.len()
            )));
        }
        Ok(NegativeMoments { ids, values })
    }

    /// Builds the table by evaluating `moment` on every nonempty subset.
    pub fn from_fn(ids: Vec<usize>, mut moment: impl FnMut(&[usize]) -> Result<T>) -> Result<Self> {
        check_ids(&ids, MAX_MOMENT_ORDER)?;
        let mut values = vec![T::one(); 1 << ids.len()];
        let mut subset = Vec::with_capacity(ids.len());
        for (mask, v) in values.iter_mut().enumerate().skip(1) {
            subset.clear();
            subset.extend(ids.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &j)| j));
            *v = moment(&subset)?;
        }
        Ok(NegativeMoments { ids, values })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// `M̄_U` for the subset encoded by `mask`.
    pub fn by_mask(&self, mask: usize) -> T {
        self.values[mask]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn mask_of(&self, subset: &[usize]) -> Option<usize> {
        let mut mask = 0;
        for j in subset {
            mask |= 1 << self.ids.iter().position(|x| x == j)?;
        }
        Some(mask)
    }

    /// `M̄_U` for a subset given by symptom ids (any order).
    pub fn get(&self, subset: &[usize]) -> Option<T> {
        self.mask_of(subset).map(|m| self.values[m])
    }

    /// Restriction to a subset of the ids, in the given order.
    pub fn restrict(&self, ids: &[usize]) -> Result<Self> {
        let bits: Vec<usize> = ids
            .iter()
            .map(|j| self.ids.iter().position(|x| x == j).ok_or_else(|| Error::UnknownSet(ids.to_vec())))
            .collect::<Result<_>>()?;
        let values = (0..1usize << ids.len())
            .map(|mask| {
                let src = bits.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).fold(0, |a, (_, &b)| a | 1 << b);
                self.values[src]
            })
            .collect();
        NegativeMoments::new(ids.to_vec(), values)
    }

    /// Inclusion–exclusion back to the joint table, rejecting cells below
    /// `-tol`.
    pub fn to_joint_with_tolerance(&self, tol: T) -> Result<JointTensor<T>> {
        if self.ids.len() > MAX_TENSOR_ORDER {
            return Err(Error::TensorOrder(self.ids.len()));
        }
        let r = self.ids.len();
        let full = (1usize << r) - 1;
        // g[W] = Σ_{x ⊆ W} p(x) = M̄_{complement of W}
        let mut cells: Vec<T> = (0..=full).map(|w| self.values[full ^ w]).collect();
        for b in 0..r {
            for mask in 0..=full {
                if mask >> b & 1 == 1 {
                    cells[mask] = cells[mask] - cells[mask ^ (1 << b)];
                }
            }
        }
        if let Some((cell, v)) = cells.iter().enumerate().find(|(_, &v)| v < -tol) {
            return Err(Error::NegativeTensorEntry { cell, value: v.as_f64() });
        }
        JointTensor::new(self.ids.clone(), cells)
    }
}

/// Inclusion–exclusion from negative moments to the joint table.
pub fn joint_from_negmoments<T: Scalar>(nm: &NegativeMoments<T>) -> Result<JointTensor<T>> {
    nm.to_joint_with_tolerance(T::lit(DEFAULT_NEGATIVE_TOL))
}

/// Marginalizes a joint table into its negative moments.
pub fn joint_to_negmoments<T: Scalar>(t: &JointTensor<T>) -> NegativeMoments<T> {
    let r = t.order();
    let full = (1usize << r) - 1;
    let mut g = t.values.clone();
    for b in 0..r {
        for mask in 0..=full {
            if mask >> b & 1 == 1 {
                g[mask] = g[mask] + g[mask ^ (1 << b)];
            }
        }
    }
    // M̄_U sums cells with every member of U absent, i.e. cells ⊆ complement(U).
    let values = (0..=full).map(|u| g[full ^ u]).collect();
    NegativeMoments { ids: t.ids.clone(), values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pair_inclusion_exclusion() {
        let nm = NegativeMoments::<f64>::new(vec![0, 1], vec![1.0, 0.7, 0.8, 0.6]).unwrap();
        let t = joint_from_negmoments(&nm).unwrap();
        // cell bits: bit0 = symptom 0 present, bit1 = symptom 1 present
        let want = [0.6, 0.2, 0.1, 0.1];
        for (got, want) in t.values().iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "{:?}", t.values());
        }
        assert!((t.total() - 1.0).abs() < 1e-12);
        let back = joint_to_negmoments(&t);
        for (got, want) in back.values().iter().zip([1.0, 0.7, 0.8, 0.6]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn all_ones_is_point_mass() {
        let nm = NegativeMoments::<f64>::new(vec![3, 1, 2], vec![1.0; 8]).unwrap();
        let t = joint_from_negmoments(&nm).unwrap();
        assert_eq!(t.cell(0), 1.0);
        assert!(t.values()[1..].iter().all(|&v| v == 0.0));
        let back = joint_to_negmoments(&t);
        assert!(back.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn uniform_tensor_moments() {
        let t = JointTensor::<f64>::new(vec![0, 1, 2], vec![0.125; 8]).unwrap();
        let nm = joint_to_negmoments(&t);
        for mask in 0..8usize {
            assert!((nm.by_mask(mask) - 0.5f64.powi(mask.count_ones() as i32)).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_cells_are_rejected() {
        // M̄_ab > M̄_a is impossible for a distribution.
        let nm = NegativeMoments::<f64>::new(vec![0, 1], vec![1.0, 0.5, 0.8, 0.6]).unwrap();
        assert!(matches!(joint_from_negmoments(&nm), Err(Error::NegativeTensorEntry { .. })));
        assert!(nm.to_joint_with_tolerance(0.2).is_ok());
    }

    #[test]
    fn order_is_capped() {
        let nm = NegativeMoments::<f64>::new(vec![0, 1, 2, 3], vec![1.0; 16]).unwrap();
        assert!(matches!(joint_from_negmoments(&nm), Err(Error::TensorOrder(4))));
        assert!(JointTensor::<f64>::new(vec![0, 1, 2, 3], vec![0.0625; 16]).is_err());
        assert!(JointTensor::<f64>::new(vec![1, 1], vec![0.25; 4]).is_err());
    }

    #[test]
    fn restrict_and_permute() {
        let t = JointTensor::<f64>::new(vec![4, 5, 6], (1..=8).map(|x| x as f64 / 36.0).collect()).unwrap();
        let nm = joint_to_negmoments(&t);
        let sub = nm.restrict(&[6, 4]).unwrap();
        assert_eq!(sub.get(&[4, 6]), nm.get(&[6, 4]));
        assert_eq!(sub.get(&[6]), nm.get(&[6]));
        let p = t.permuted(&[2, 0, 1]);
        assert_eq!(p.ids(), &[6, 4, 5]);
        // outcome (s6=1, s4=0, s5=1) → original bits s4=0,s5=1,s6=1 = 0b110
        assert_eq!(p.cell(0b101), t.cell(0b110));
        let pm = joint_to_negmoments(&p);
        assert_eq!(pm.get(&[4, 5]), nm.get(&[4, 5]));
    }

    fn random_table(order: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.001f64..1.0, 1 << order).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn mobius_roundtrip((order, values) in (1usize..=3).prop_flat_map(|o| (Just(o), random_table(o)))) {
            let t = JointTensor::<f64>::new((0..order).collect(), values).unwrap();
            let nm = joint_to_negmoments(&t);
            prop_assert!((nm.by_mask(0) - 1.0).abs() < 1e-12);
            // non-increasing under supersets
            for u in 0..(1usize << order) {
                for v in 0..(1usize << order) {
                    if u & v == u {
                        prop_assert!(nm.by_mask(v) <= nm.by_mask(u) + 1e-15);
                    }
                }
            }
            let back = joint_from_negmoments(&nm).unwrap();
            for (a, b) in back.values().iter().zip(t.values()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn negmoment_roundtrip(values in random_table(3)) {
            let t = JointTensor::<f64>::new(vec![2, 0, 1], values).unwrap();
            let nm = joint_to_negmoments(&t);
            let again = joint_to_negmoments(&joint_from_negmoments(&nm).unwrap());
            for (a, b) in again.values().iter().zip(nm.values()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
