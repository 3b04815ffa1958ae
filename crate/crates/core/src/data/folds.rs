//! Deterministic 5-fold splitting.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DataError;

pub const FOLD_COUNT: usize = 5;

/// Assignment of every id to exactly one of five folds.
#[derive(Clone, Debug)]
pub struct FoldSplit {
    pub fold_count: usize,
    assignments: HashMap<String, usize>,
    // ids in shuffled order, for stable iteration
    order: Vec<String>,
}

impl FoldSplit {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    /// Held-out ids of a fold, in assignment order.
    pub fn test_ids(&self, fold: usize) -> Vec<String> {
        self.order
            .iter()
            .filter(|id| self.assignments[*id] == fold)
            .cloned()
            .collect()
    }

    /// Training ids of a fold (everything not held out), in assignment order.
    pub fn train_ids(&self, fold: usize) -> Vec<String> {
        self.order
            .iter()
            .filter(|id| self.assignments[*id] != fold)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Seeded Fisher-Yates shuffle followed by round-robin assignment, so fold
/// sizes differ by at most one.
pub fn make_folds(ids: &[String], seed: u64) -> Result<FoldSplit, DataError> {
    if ids.len() < FOLD_COUNT {
        return Err(DataError::Validation(format!(
            "need at least {FOLD_COUNT} ids to build {FOLD_COUNT} folds, got {}",
            ids.len()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(DataError::Validation(format!("duplicate id {id:?}")));
        }
    }
    let mut order: Vec<String> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let assignments = order
        .iter()
        .enumerate()
        .map(|(pos, id)| (id.clone(), pos % FOLD_COUNT))
        .collect();
    Ok(FoldSplit {
        fold_count: FOLD_COUNT,
        assignments,
        order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("n{i:04}")).collect()
    }

    #[test]
    fn full_lidc_count_gives_paper_fold_sizes() {
        let split = make_folds(&ids(2622), 7).unwrap();
        for fold in 0..FOLD_COUNT {
            let test = split.test_ids(fold).len();
            assert!(test == 524 || test == 525, "fold {fold} has {test}");
            assert_eq!(split.train_ids(fold).len() + test, 2622);
        }
    }

    #[test]
    fn ten_ids_give_two_per_fold() {
        let split = make_folds(&ids(10), 1).unwrap();
        for fold in 0..FOLD_COUNT {
            assert_eq!(split.test_ids(fold).len(), 2);
        }
    }

    #[test]
    fn folds_partition_ids_disjointly() {
        let all = ids(23);
        let split = make_folds(&all, 3).unwrap();
        let mut seen = std::collections::HashSet::new();
        for fold in 0..FOLD_COUNT {
            let test = split.test_ids(fold);
            let train: std::collections::HashSet<String> =
                split.train_ids(fold).into_iter().collect();
            for id in &test {
                assert!(!train.contains(id), "{id} in both sides of fold {fold}");
                assert!(seen.insert(id.clone()), "{id} in two test folds");
            }
        }
        assert_eq!(seen.len(), all.len());
    }

    #[test]
    fn same_seed_same_assignment() {
        let a = make_folds(&ids(50), 9).unwrap();
        let b = make_folds(&ids(50), 9).unwrap();
        for id in ids(50) {
            assert_eq!(a.fold_of(&id), b.fold_of(&id));
        }
    }

    #[test]
    fn too_few_or_duplicate_ids_rejected() {
        assert!(make_folds(&ids(4), 0).is_err());
        let mut dup = ids(6);
        dup[5] = dup[0].clone();
        assert!(make_folds(&dup, 0).is_err());
    }
}
