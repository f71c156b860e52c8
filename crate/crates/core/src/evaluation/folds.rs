use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::rng;

pub const DEFAULT_FOLDS: usize = 5;

/// Fold membership for every sample of a k-fold protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_ids: Option<Vec<String>>,
}

impl FoldAssignment {
    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    /// Sample indices held out in `fold`, ascending.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    /// Sample indices used for training when `fold` is held out, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }

    /// Checks range, non-emptiness and group exclusivity.
    pub fn validate(&self) -> Result<(), String> {
        if let Some(&f) = self.fold_of.iter().find(|&&f| f >= self.k) {
            return Err(format!("fold id {f} out of range for k = {}", self.k));
        }
        if let Some(f) = self.fold_sizes().iter().position(|&s| s == 0) {
            return Err(format!("fold {f} is empty"));
        }
        if let Some(groups) = &self.group_ids {
            if groups.len() != self.len() {
                return Err("group_ids length differs from fold_of".into());
            }
            let mut seen: HashMap<&str, usize> = HashMap::new();
            for (g, &f) in groups.iter().zip(&self.fold_of) {
                if *seen.entry(g).or_insert(f) != f {
                    return Err(format!("group {g:?} spans more than one fold"));
                }
            }
        }
        Ok(())
    }
}

/// Assigns each of `labels.len()` samples to one of `k` folds.
///
/// Without options, a seeded permutation is cut into contiguous slices whose
/// sizes differ by at most one. `stratified` shuffles each class separately
/// and deals members round-robin, continuing the rotation from one class to
/// the next. `group_ids` keeps every group inside one fold: groups are
/// shuffled, stably ordered by size (largest first) and dealt round-robin.
pub fn kfold_split(
    labels: &[u8],
    k: usize,
    seed: u64,
    stratified: bool,
    group_ids: Option<&[String]>,
) -> Result<FoldAssignment, EvalError> {
    let n = labels.len();
    if k < 2 {
        return Err(EvalError::InvalidFolds(k));
    }
    if n < k {
        return Err(EvalError::TooFewSamples { n, k });
    }
    if stratified && group_ids.is_some() {
        return Err(EvalError::ConflictingOptions);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(EvalError::InvalidLabel(bad));
    }
    let mut rng = rng::stream(seed, 0);
    let mut fold_of = vec![0usize; n];

    if let Some(groups) = group_ids {
        if groups.len() != n {
            return Err(EvalError::LengthMismatch {
                expected: n,
                got: groups.len(),
            });
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        for (i, g) in groups.iter().enumerate() {
            let slot = *index.entry(g.as_str()).or_insert_with(|| {
                members.push(Vec::new());
                members.len() - 1
            });
            members[slot].push(i);
        }
        if members.len() < k {
            return Err(EvalError::TooFewGroups { groups: members.len(), k });
        }
        members.shuffle(&mut rng);
        members.sort_by(|a, b| b.len().cmp(&a.len()));
        for (j, group) in members.iter().enumerate() {
            for &i in group {
                fold_of[i] = j % k;
            }
        }
    } else if stratified {
        let mut offset = 0;
        for class in 0..2u8 {
            let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            if idx.len() < k {
                return Err(EvalError::TooFewPerClass {
                    class,
                    count: idx.len(),
                    k,
                });
            }
            idx.shuffle(&mut rng);
            for (j, &i) in idx.iter().enumerate() {
                fold_of[i] = (offset + j) % k;
            }
            offset = (offset + idx.len()) % k;
        }
    } else {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for f in 0..k {
            for &i in &perm[f * n / k..(f + 1) * n / k] {
                fold_of[i] = f;
            }
        }
    }

    Ok(FoldAssignment {
        fold_of,
        k,
        seed,
        stratified,
        group_ids: group_ids.map(|g| g.to_vec()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn per_class_sizes(a: &FoldAssignment, labels: &[u8], class: u8) -> Vec<usize> {
        let mut s = vec![0; a.k];
        for (i, &f) in a.fold_of.iter().enumerate() {
            if labels[i] == class {
                s[f] += 1;
            }
        }
        s
    }

    fn spread(v: &[usize]) -> usize {
        v.iter().max().unwrap() - v.iter().min().unwrap()
    }

    #[test]
    fn paper_sized_dataset_splits_evenly() {
        let labels: Vec<u8> = (0..8615).map(|i| u8::from(i < 1374)).collect();
        for stratified in [false, true] {
            let a = kfold_split(&labels, 5, 7, stratified, None).unwrap();
            assert_eq!(a.fold_sizes(), vec![1723; 5]);
        }
    }

    #[test]
    fn balanced_ten_gives_one_of_each() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let a = kfold_split(&labels, 5, 3, true, None).unwrap();
        assert_eq!(per_class_sizes(&a, &labels, 0), vec![1; 5]);
        assert_eq!(per_class_sizes(&a, &labels, 1), vec![1; 5]);
    }

    #[test]
    fn five_groups_five_folds() {
        let groups: Vec<String> = (0..20).map(|i| format!("g{}", i % 5)).collect();
        let labels = vec![0u8; 20];
        let a = kfold_split(&labels, 5, 11, false, Some(&groups)).unwrap();
        a.validate().unwrap();
        assert_eq!(a.fold_sizes(), vec![4; 5]);
    }

    #[test]
    fn errors() {
        assert_eq!(kfold_split(&[0, 1, 0], 5, 0, false, None), Err(EvalError::TooFewSamples { n: 3, k: 5 }));
        let labels = [0, 0, 0, 0, 0, 0, 1, 1];
        assert_eq!(
            kfold_split(&labels, 3, 0, true, None),
            Err(EvalError::TooFewPerClass { class: 1, count: 2, k: 3 })
        );
        let g: Vec<String> = (0..8).map(|i| i.to_string()).collect();
        assert_eq!(kfold_split(&labels, 2, 0, true, Some(&g)), Err(EvalError::ConflictingOptions));
        assert_eq!(kfold_split(&labels, 1, 0, false, None), Err(EvalError::InvalidFolds(1)));
        let few: Vec<String> = (0..8).map(|i| (i % 2).to_string()).collect();
        assert_eq!(
            kfold_split(&labels, 3, 0, false, Some(&few)),
            Err(EvalError::TooFewGroups { groups: 2, k: 3 })
        );
    }

    #[test]
    fn seed_changes_assignment() {
        let labels = vec![0u8; 50];
        let a = kfold_split(&labels, 5, 1, false, None).unwrap();
        assert_eq!(a, kfold_split(&labels, 5, 1, false, None).unwrap());
        assert_ne!(a, kfold_split(&labels, 5, 2, false, None).unwrap());
    }

    proptest! {
        #[test]
        fn unstratified_partition(n in 2usize..300, k in 2usize..10, seed: u64) {
            prop_assume!(n >= k);
            let labels = vec![0u8; n];
            let a = kfold_split(&labels, k, seed, false, None).unwrap();
            prop_assert!(a.validate().is_ok());
            prop_assert_eq!(a.fold_sizes().iter().sum::<usize>(), n);
            prop_assert!(spread(&a.fold_sizes()) <= 1);
        }

        #[test]
        fn stratified_balance(labels in prop::collection::vec(0u8..2, 10..300), k in 2usize..6, seed: u64) {
            let counts = [labels.iter().filter(|&&l| l == 0).count(), labels.iter().filter(|&&l| l == 1).count()];
            prop_assume!(counts[0] >= k && counts[1] >= k);
            let a = kfold_split(&labels, k, seed, true, None).unwrap();
            prop_assert!(a.validate().is_ok());
            prop_assert!(spread(&per_class_sizes(&a, &labels, 0)) <= 1);
            prop_assert!(spread(&per_class_sizes(&a, &labels, 1)) <= 1);
            prop_assert!(spread(&a.fold_sizes()) <= 1);
        }

        #[test]
        fn groups_stay_whole(groups in prop::collection::vec(0u8..20, 5..200), k in 2usize..6, seed: u64) {
            let ids: Vec<String> = groups.iter().map(|g| format!("src{g}")).collect();
            let distinct = groups.iter().collect::<std::collections::HashSet<_>>().len();
            prop_assume!(distinct >= k);
            let labels = vec![1u8; ids.len()];
            let a = kfold_split(&labels, k, seed, false, Some(&ids)).unwrap();
            prop_assert!(a.validate().is_ok());
        }
    }
}
