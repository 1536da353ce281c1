//! Train/test split and k-fold assignment.
//!
//! The shuffle is a Fisher-Yates pass over `0..n` driven by SplitMix64:
//! for `i` from `n-1` down to `1`, draw `r = next_u64()` and swap positions
//! `i` and `r % (i + 1)`. The first `round(n * test_fraction)` shuffled
//! positions form the heldout test set; the remaining positions are dealt
//! round-robin into folds (`fold = position_in_training % folds`).

use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::data::{DataError, Result};

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub test_fraction: f64,
    pub folds: usize,
    /// Per-row heldout flag.
    pub is_test: Vec<bool>,
    /// Per-row fold id; `None` for heldout rows.
    pub fold: Vec<Option<usize>>,
}

/// Seeded Fisher-Yates permutation of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        idx.swap(i, j);
    }
    idx
}

pub fn make_split_plan(n: usize, seed: u64, test_fraction: f64, folds: usize) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(DataError::InvalidConfig(format!(
            "test fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    if folds == 0 {
        return Err(DataError::InvalidConfig("folds must be positive".into()));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n < folds || n - n_test < folds {
        return Err(DataError::TooFewRows {
            needed: folds + n_test,
            have: n,
        });
    }
    let order = shuffled_indices(n, seed);
    let mut is_test = vec![false; n];
    let mut fold = vec![None; n];
    for (pos, &row) in order.iter().enumerate() {
        if pos < n_test {
            is_test[row] = true;
        } else {
            fold[row] = Some((pos - n_test) % folds);
        }
    }
    Ok(SplitPlan {
        seed,
        test_fraction,
        folds,
        is_test,
        fold,
    })
}

impl SplitPlan {
    pub fn n_rows(&self) -> usize {
        self.is_test.len()
    }

    pub fn test_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.is_test[i]).collect()
    }

    pub fn train_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| !self.is_test[i]).collect()
    }

    /// Rows held out for validation in fold `k`.
    pub fn validation_rows(&self, k: usize) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&i| self.fold[i] == Some(k))
            .collect()
    }

    /// Training rows of fold `k`: every non-test row outside fold `k`.
    pub fn fold_training_rows(&self, k: usize) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&i| matches!(self.fold[i], Some(f) if f != k))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_division_without_test() {
        let plan = make_split_plan(10, 3, 0.0, 5).unwrap();
        for k in 0..5 {
            assert_eq!(plan.validation_rows(k).len(), 2);
        }
        assert!(plan.test_rows().is_empty());
    }

    #[test]
    fn eighty_twenty_with_five_folds() {
        let plan = make_split_plan(100, 11, 0.2, 5).unwrap();
        assert_eq!(plan.test_rows().len(), 20);
        assert_eq!(plan.train_rows().len(), 80);
        for k in 0..5 {
            assert_eq!(plan.validation_rows(k).len(), 16);
            assert_eq!(plan.fold_training_rows(k).len(), 64);
        }
    }

    #[test]
    fn same_seed_same_plan() {
        let a = make_split_plan(1000, 99, 0.2, 5).unwrap();
        let b = make_split_plan(1000, 99, 0.2, 5).unwrap();
        assert_eq!(a, b);
        let c = make_split_plan(1000, 100, 0.2, 5).unwrap();
        assert_ne!(a.is_test, c.is_test);
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(
            make_split_plan(4, 0, 0.0, 5),
            Err(DataError::TooFewRows { .. })
        ));
    }

    /// Independent SplitMix64 from its published constants.
    fn splitmix(state: &mut u64) -> u64 {
        *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    #[test]
    fn assignment_matches_documented_shuffle() {
        let n = 100;
        let seed = 2024;
        let mut state = seed;
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = (splitmix(&mut state) % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }
        let plan = make_split_plan(n, seed, 0.2, 5).unwrap();
        for (pos, &row) in order.iter().enumerate() {
            if pos < 20 {
                assert!(plan.is_test[row]);
            } else {
                assert_eq!(plan.fold[row], Some((pos - 20) % 5));
            }
        }
    }

    proptest! {
        #[test]
        fn folds_partition_training_rows(n in 6usize..400, seed in any::<u64>()) {
            let plan = make_split_plan(n, seed, 0.2, 5).unwrap();
            let n_test = plan.test_rows().len();
            prop_assert!((n_test as f64 - 0.2 * n as f64).abs() <= 1.0);
            let mut seen = vec![0usize; n];
            for k in 0..5 {
                for r in plan.validation_rows(k) {
                    prop_assert!(!plan.is_test[r]);
                    seen[r] += 1;
                }
            }
            for r in 0..n {
                prop_assert_eq!(seen[r], usize::from(!plan.is_test[r]));
            }
        }
    }
}
