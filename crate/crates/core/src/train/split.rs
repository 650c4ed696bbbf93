use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Whether folds are drawn over patients or over individual phase images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitUnit {
    #[default]
    Patient,
    Image,
}

/// Group sizes by largest remainder; ties go to lower group indices.
fn group_sizes(n: usize, groups: usize) -> Vec<usize> {
    let base = n / groups;
    let extra = n % groups;
    (0..groups).map(|g| base + usize::from(g < extra)).collect()
}

/// Shuffles `ids` with `seed` and deals them into `fold_count` groups.
/// Fold `i` tests on group `i`, validates on group `i + 1` (cyclically) and
/// trains on the rest, which gives 8:1:1 for ten folds.
pub fn kfold_split(ids: &[String], fold_count: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if fold_count < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 folds, got {fold_count}"
        )));
    }
    if ids.len() < fold_count {
        return Err(Error::InvalidArgument(format!(
            "{} ids cannot fill {fold_count} folds",
            ids.len()
        )));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("duplicate ids".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let mut groups = Vec::with_capacity(fold_count);
    let mut start = 0;
    for size in group_sizes(sorted.len(), fold_count) {
        groups.push(sorted[start..start + size].to_vec());
        start += size;
    }
    Ok((0..fold_count)
        .map(|i| {
            let v = (i + 1) % fold_count;
            let train_ids = (0..fold_count)
                .filter(|&g| g != i && g != v)
                .flat_map(|g| groups[g].iter().cloned())
                .collect();
            FoldSplit {
                fold_index: i,
                train_ids,
                val_ids: groups[v].clone(),
                test_ids: groups[i].clone(),
            }
        })
        .collect())
}

/// Image id for phase `phase` of `patient`, as used for image-level splits.
pub fn image_id(patient: &str, phase: usize) -> String {
    format!("{patient}/{phase}")
}

/// Patient owning an id produced by [`image_id`] (or a plain patient id).
pub fn owner(id: &str) -> &str {
    id.split('/').next().unwrap_or(id)
}

/// Patients that appear both in the fold's test set and in its training or
/// validation set.
pub fn leaked_patients(f: &FoldSplit) -> Vec<String> {
    let mut test: Vec<&str> = f.test_ids.iter().map(|s| owner(s)).collect();
    test.sort_unstable();
    test.dedup();
    let mut out: Vec<String> = f
        .train_ids
        .iter()
        .chain(&f.val_ids)
        .map(|s| owner(s))
        .filter(|p| test.binary_search(p).is_ok())
        .map(String::from)
        .collect();
    out.sort();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:03}")).collect()
    }

    #[test]
    fn twenty_patients() {
        let folds = kfold_split(&ids(20), 10, 7).unwrap();
        assert_eq!(folds.len(), 10);
        let mut all_test: Vec<String> = Vec::new();
        for f in &folds {
            assert_eq!(f.test_ids.len(), 2);
            assert_eq!(f.val_ids.len(), 2);
            assert_eq!(f.train_ids.len(), 16);
            all_test.extend(f.test_ids.iter().cloned());
        }
        all_test.sort();
        assert_eq!(all_test, ids(20));
        assert_eq!(folds, kfold_split(&ids(20), 10, 7).unwrap());
        assert_ne!(folds, kfold_split(&ids(20), 10, 8).unwrap());
    }

    #[test]
    fn image_level_split_can_leak_patient_level_cannot() {
        let images: Vec<String> = ids(10)
            .iter()
            .flat_map(|p| (0..6).map(move |k| image_id(p, k)))
            .collect();
        let folds = kfold_split(&images, 10, 1).unwrap();
        assert!(folds.iter().any(|f| !leaked_patients(f).is_empty()));
        let folds = kfold_split(&ids(10), 10, 1).unwrap();
        assert!(folds.iter().all(|f| leaked_patients(f).is_empty()));
    }

    #[test]
    fn bad_inputs() {
        assert!(kfold_split(&ids(5), 10, 0).is_err());
        assert!(kfold_split(&["a".into(), "a".into(), "b".into()], 3, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_patients(n in 10usize..120, seed in 0u64..1000) {
            let all = ids(n);
            for f in kfold_split(&all, 10, seed).unwrap() {
                let mut u: Vec<String> = f.train_ids.iter().chain(&f.val_ids).chain(&f.test_ids).cloned().collect();
                u.sort();
                prop_assert_eq!(&u, &all);
                prop_assert!(leaked_patients(&f).is_empty());
                prop_assert!(f.test_ids.len() == n / 10 || f.test_ids.len() == n / 10 + 1);
            }
        }
    }
}
