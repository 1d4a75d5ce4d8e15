use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Disjoint train/test partition of identities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train_identities: BTreeSet<usize>,
    pub test_identities: BTreeSet<usize>,
    pub seed: u64,
}

/// Shuffle the distinct identities with `seed` and take the first `n_train`
/// for training. Depends only on the identity set and the seed, not on the
/// order identities are listed in.
pub fn make_split(identities: &[usize], seed: u64, n_train: usize) -> Result<DatasetSplit> {
    let mut ids: Vec<usize> = identities.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if n_train == 0 || n_train >= ids.len() {
        return Err(Error::Config(format!(
            "n_train must be in 1..{} for {} identities, got {n_train}",
            ids.len(),
            ids.len()
        )));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(DatasetSplit {
        train_identities: ids[..n_train].iter().copied().collect(),
        test_identities: ids[n_train..].iter().copied().collect(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn paper_sized_split() {
        let ids: Vec<usize> = (0..252).collect();
        let s = make_split(&ids, 0, 202).unwrap();
        assert_eq!((s.train_identities.len(), s.test_identities.len()), (202, 50));
        assert_eq!(s, make_split(&ids, 0, 202).unwrap());
        assert_ne!(make_split(&ids, 1, 202).unwrap().train_identities, make_split(&ids, 2, 202).unwrap().train_identities);
    }

    #[test]
    fn out_of_range_counts_fail() {
        assert!(make_split(&[1, 2, 3], 0, 3).is_err());
        assert!(make_split(&[1, 2, 3], 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_exhaustive_and_order_free(
            mut ids in proptest::collection::vec(0usize..500, 2..80),
            seed in any::<u64>(),
            frac in 0.0f64..1.0,
        ) {
            let distinct: BTreeSet<usize> = ids.iter().copied().collect();
            prop_assume!(distinct.len() >= 2);
            let n_train = 1 + ((distinct.len() - 1) as f64 * frac) as usize % (distinct.len() - 1);
            let s = make_split(&ids, seed, n_train).unwrap();
            prop_assert!(s.train_identities.is_disjoint(&s.test_identities));
            let all: BTreeSet<usize> = s.train_identities.union(&s.test_identities).copied().collect();
            prop_assert_eq!(&all, &distinct);
            prop_assert_eq!(s.train_identities.len(), n_train);
            ids.reverse();
            prop_assert_eq!(make_split(&ids, seed, n_train).unwrap(), s);
        }
    }
}
