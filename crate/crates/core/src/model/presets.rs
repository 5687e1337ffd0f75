//! Small reference networks.
//!
//! Symptom indices `a..e` are `0..5`; disease `A` is 0 and `B` is 1.

use crate::model::{NetworkStructure, NoisyOrParameters};
use crate::scalar::Scalar;

/// `A → {a, b, c}`, `B → {b, c, d, e}`.
pub fn fig1() -> NetworkStructure {
    NetworkStructure::new(2, 5, [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (1, 3), (1, 4)]).unwrap()
}

/// [`fig1`] plus the edge `A → d`: no triplet is singly-coupled.
pub fn fig2() -> NetworkStructure {
    NetworkStructure::new(2, 5, [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (1, 4)]).unwrap()
}

/// Reference parameters for [`fig1`]: `p_A = 0.3`, `f_A = (0.2, 0.5, 0.6)`,
/// `p_B = 0.4`, `f_B = (0.3, 0.7, 0.25, 0.5)`, every leak set to `leak`.
pub fn fig1_params<T: Scalar>(leak: f64) -> NoisyOrParameters<T> {
    let c = T::lit;
    NoisyOrParameters::new(
        &fig1(),
        vec![c(0.3), c(0.4)],
        [
            (0, 0, c(0.2)),
            (0, 1, c(0.5)),
            (0, 2, c(0.6)),
            (1, 1, c(0.3)),
            (1, 2, c(0.7)),
            (1, 3, c(0.25)),
            (1, 4, c(0.5)),
        ],
        vec![c(leak); 5],
    )
    .unwrap()
}
