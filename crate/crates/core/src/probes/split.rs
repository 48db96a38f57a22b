use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Repeated random train/test partitions with an inner CV fold count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n: usize,
    pub repetitions: usize,
    pub test_fraction: f64,
    pub inner_folds: usize,
    pub base_seed: u64,
}

impl SplitPlan {
    pub const DEFAULT_REPETITIONS: usize = 30;
    pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
    pub const DEFAULT_INNER_FOLDS: usize = 5;

    /// 30 repetitions of an 80/20 split with 5 inner folds.
    pub fn new(n: usize, base_seed: u64) -> Self {
        SplitPlan {
            n,
            repetitions: Self::DEFAULT_REPETITIONS,
            test_fraction: Self::DEFAULT_TEST_FRACTION,
            inner_folds: Self::DEFAULT_INNER_FOLDS,
            base_seed,
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        SplitPlan { n, ..self.clone() }
    }

    pub fn test_size(&self) -> usize {
        (self.test_fraction * self.n as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "test fraction {} must lie strictly between 0 and 1",
                self.test_fraction
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidArgument("at least one repetition is required".into()));
        }
        if self.inner_folds < 2 {
            return Err(Error::InvalidArgument(format!(
                "inner folds must be at least 2, got {}",
                self.inner_folds
            )));
        }
        let test = self.test_size();
        if self.n < 5 || test == 0 || test >= self.n {
            return Err(Error::InvalidArgument(format!(
                "{} samples cannot form non-empty train and test sets at fraction {}",
                self.n, self.test_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

const SPLIT_STREAM: u64 = 0x5350_4c49_5400_0001;

/// Mixes a base seed with a sequence of stream identifiers (SplitMix64 finalizer chain).
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    let mut h = SplitMix64::seed_from_u64(base).next_u64();
    for &x in stream {
        h = SplitMix64::seed_from_u64(h ^ x).next_u64();
    }
    h
}

/// Seeded Fisher-Yates permutation of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut SplitMix64::seed_from_u64(seed));
    idx
}

/// One partition per repetition; repetition `r` depends only on `(base_seed, r, n)`.
pub fn make_splits(plan: &SplitPlan) -> Result<Vec<Split>> {
    plan.validate()?;
    let test_size = plan.test_size();
    Ok((0..plan.repetitions)
        .map(|r| {
            let perm = shuffled_indices(plan.n, derive_seed(plan.base_seed, &[SPLIT_STREAM, r as u64]));
            let mut test = perm[..test_size].to_vec();
            let mut train = perm[test_size..].to_vec();
            test.sort_unstable();
            train.sort_unstable();
            Split { train, test }
        })
        .collect())
}

/// `k` validation folds over `0..n` as contiguous blocks of a seeded shuffle.
///
/// With `labels`, the shuffle is reordered class by class before dealing
/// positions round-robin, which stratifies the folds.
pub fn inner_folds(n: usize, k: usize, seed: u64, labels: Option<&[f64]>) -> Result<Vec<Split>> {
    if k < 2 || n < k {
        return Err(Error::InvalidArgument(format!(
            "cannot form {k} folds from {n} samples"
        )));
    }
    let perm = shuffled_indices(n, seed);
    let mut fold_of = vec![0usize; n];
    match labels {
        None => {
            let (base, extra) = (n / k, n % k);
            let mut pos = 0;
            for f in 0..k {
                let size = base + usize::from(f < extra);
                for &i in &perm[pos..pos + size] {
                    fold_of[i] = f;
                }
                pos += size;
            }
        }
        Some(y) => {
            let ordered: Vec<usize> = perm
                .iter()
                .copied()
                .filter(|&i| y[i] == 1.0)
                .chain(perm.iter().copied().filter(|&i| y[i] != 1.0))
                .collect();
            for (pos, &i) in ordered.iter().enumerate() {
                fold_of[i] = pos % k;
            }
        }
    }
    Ok((0..k)
        .map(|f| Split {
            train: (0..n).filter(|&i| fold_of[i] != f).collect(),
            test: (0..n).filter(|&i| fold_of[i] == f).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_partition(s: &Split, n: usize) {
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn ten_samples() {
        let plan = SplitPlan::new(10, 1);
        let splits = make_splits(&plan).unwrap();
        assert_eq!(splits.len(), 30);
        for s in &splits {
            assert_eq!((s.train.len(), s.test.len()), (8, 2));
            check_partition(s, 10);
        }
        assert_eq!(splits, make_splits(&plan).unwrap());
    }

    #[test]
    fn keller_sized_plan() {
        let splits = make_splits(&SplitPlan::new(480, 7)).unwrap();
        assert_eq!(splits.len(), 30);
        assert!(splits.iter().all(|s| s.train.len() == 384 && s.test.len() == 96));
        // Different repetitions draw different test sets.
        assert_ne!(splits[0].test, splits[1].test);
    }

    #[test]
    fn repetition_depends_only_on_seed_and_index() {
        let a = make_splits(&SplitPlan { repetitions: 3, ..SplitPlan::new(50, 9) }).unwrap();
        let b = make_splits(&SplitPlan { repetitions: 8, ..SplitPlan::new(50, 9) }).unwrap();
        assert_eq!(a[..], b[..3]);
        let c = make_splits(&SplitPlan::new(50, 10)).unwrap();
        assert_ne!(a[0], c[0]);
    }

    #[test]
    fn invalid_plans() {
        assert!(make_splits(&SplitPlan::new(4, 0)).is_err());
        assert!(make_splits(&SplitPlan { test_fraction: 0.01, ..SplitPlan::new(10, 0) }).is_err());
        assert!(make_splits(&SplitPlan { test_fraction: 1.0, ..SplitPlan::new(10, 0) }).is_err());
        assert!(make_splits(&SplitPlan { repetitions: 0, ..SplitPlan::new(10, 0) }).is_err());
        assert!(make_splits(&SplitPlan { inner_folds: 1, ..SplitPlan::new(10, 0) }).is_err());
    }

    #[test]
    fn folds_cover_everything_once() {
        let folds = inner_folds(23, 5, 4, None).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        let mut seen: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
        for f in &folds {
            check_partition(f, 23);
        }
        assert!(inner_folds(3, 5, 0, None).is_err());
    }

    #[test]
    fn stratified_folds_balance_classes() {
        let y: Vec<f64> = (0..40).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
        let folds = inner_folds(40, 5, 2, Some(&y)).unwrap();
        for f in &folds {
            let pos = f.test.iter().filter(|&&i| y[i] == 1.0).count();
            assert_eq!(pos, 2);
        }
    }

    #[test]
    fn seeds_differ_by_stream() {
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_ne!(derive_seed(0, &[1]), derive_seed(1, &[0]));
        assert_eq!(derive_seed(5, &[3]), derive_seed(5, &[3]));
    }
}
