//! Bijective option permutations: original index <-> displayed slot.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::determinism::SplitMix64;

#[derive(Debug, Error)]
#[error("not a bijection over 0..{expected}: {detail}")]
pub struct PermutationError {
    pub expected: usize,
    pub detail: String,
}

/// A bijection between original option indices and displayed slots.
/// `forward[original] = displayed slot`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    forward: Vec<usize>,
    #[serde(skip)]
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Permutation {
        Permutation {
            forward: (0..n).collect(),
            inverse: (0..n).collect(),
        }
    }

    pub fn from_forward(forward: Vec<usize>) -> Result<Permutation, PermutationError> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (original, &slot) in forward.iter().enumerate() {
            if slot >= n {
                return Err(PermutationError {
                    expected: n,
                    detail: format!("slot {slot} out of range"),
                });
            }
            if inverse[slot] != usize::MAX {
                return Err(PermutationError {
                    expected: n,
                    detail: format!("slot {slot} assigned twice"),
                });
            }
            inverse[slot] = original;
        }
        Ok(Permutation { forward, inverse })
    }

    /// Uniform random permutation drawn from the given generator.
    pub fn shuffled(n: usize, rng: &mut SplitMix64) -> Permutation {
        let mut display_order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut display_order);
        let mut forward = vec![0; n];
        for (slot, &original) in display_order.iter().enumerate() {
            forward[original] = slot;
        }
        Permutation::from_forward(forward).expect("shuffle yields a bijection")
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// Displayed slot of an original option index.
    pub fn displayed_of(&self, original: usize) -> usize {
        self.forward[original]
    }

    /// Original option index shown at a displayed slot.
    pub fn original_of(&self, slot: usize) -> usize {
        self.inverse[slot]
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(i, &s)| i == s)
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = PermutationError;
    fn try_from(forward: Vec<usize>) -> Result<Self, Self::Error> {
        Permutation::from_forward(forward)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Vec<usize> {
        p.forward
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_maps_to_self() {
        let p = Permutation::identity(4);
        for i in 0..4 {
            assert_eq!(p.displayed_of(i), i);
            assert_eq!(p.original_of(i), i);
        }
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(Permutation::from_forward(vec![0, 0, 1]).is_err());
        assert!(Permutation::from_forward(vec![0, 3]).is_err());
    }

    #[test]
    fn inverse_round_trips_for_random_permutations() {
        let mut rng = SplitMix64::new(11);
        for n in 2..=26 {
            let p = Permutation::shuffled(n, &mut rng);
            for slot in 0..n {
                assert_eq!(p.displayed_of(p.original_of(slot)), slot);
            }
            for original in 0..n {
                assert_eq!(p.original_of(p.displayed_of(original)), original);
            }
        }
    }

    #[test]
    fn serde_round_trip_restores_inverse() {
        let mut rng = SplitMix64::new(5);
        let p = Permutation::shuffled(6, &mut rng);
        let json = serde_json::to_string(&p).unwrap();
        let back: Permutation = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);
        assert_eq!(back.original_of(back.displayed_of(3)), 3);
    }
}
