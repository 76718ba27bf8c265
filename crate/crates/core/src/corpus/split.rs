use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{write_corpus, CorpusError};
use crate::chronology::seeded_rng;
use crate::episode_pipeline::Episode;

pub const SPLIT_FILE_NAMES: [&str; 3] = ["train.jsonl", "valid.jsonl", "test.jsonl"];

/// Slack guarding floor boundaries against products like 0.1 * 30 = 2.9999….
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self, CorpusError> {
        let spec = Self {
            train_fraction: train,
            val_fraction: val,
            test_fraction: test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let fractions = [self.train_fraction, self.val_fraction, self.test_fraction];
        if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return Err(CorpusError::Spec(format!("fraction {f} outside (0, 1)")));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Spec(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Split sizes for `n` episodes: floor for train and validation, the
    /// remainder for test.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let train = ((n as f64 * self.train_fraction) + FLOOR_SLACK).floor() as usize;
        let val = ((n as f64 * self.val_fraction) + FLOOR_SLACK).floor() as usize;
        let train = train.min(n);
        let val = val.min(n - train);
        [train, val, n - train - val]
    }
}

impl FromStr for SplitSpec {
    type Err = CorpusError;

    /// `0.8/0.1/0.1` or `0.8,0.1,0.1`; the seed defaults to 0.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(['/', ',']).map(str::trim).collect();
        let [a, b, c] = parts.as_slice() else {
            return Err(CorpusError::Spec(format!("expected three fractions, got {s:?}")));
        };
        let parse = |t: &str| {
            t.parse::<f64>()
                .map_err(|_| CorpusError::Spec(format!("bad fraction {t:?}")))
        };
        SplitSpec::new(parse(a)?, parse(b)?, parse(c)?, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<Episode>,
    pub val: Vec<Episode>,
    pub test: Vec<Episode>,
}

/// Seeded shuffle of `0..n`, cut into train, validation and test.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3], CorpusError> {
    spec.validate()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(spec.seed));
    let [train, val, _] = spec.sizes(n);
    let test = order.split_off(train + val);
    let val_part = order.split_off(train);
    Ok([order, val_part, test])
}

/// Episode-level split; every episode lands in exactly one part.
pub fn split_corpus(episodes: Vec<Episode>, spec: &SplitSpec) -> Result<Split, CorpusError> {
    let [train, val, test] = split_indices(episodes.len(), spec)?;
    let mut slots: Vec<Option<Episode>> = episodes.into_iter().map(Some).collect();
    let mut take =
        |idx: Vec<usize>| -> Vec<Episode> { idx.into_iter().filter_map(|i| slots[i].take()).collect() };
    Ok(Split {
        train: take(train),
        val: take(val),
        test: take(test),
    })
}

/// Writes the three parts under `dir` as [`SPLIT_FILE_NAMES`].
pub fn write_splits(split: &Split, dir: &Path) -> Result<(), CorpusError> {
    for (name, part) in SPLIT_FILE_NAMES
        .iter()
        .zip([&split.train, &split.val, &split.test])
    {
        write_corpus(part, &dir.join(name))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chronology::Relationship;
    use crate::episode_pipeline::fixtures::episode;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn floor_arithmetic() {
        let spec = SplitSpec::new(0.8, 0.1, 0.1, 3).unwrap();
        assert_eq!(spec.sizes(10), [8, 1, 1]);
        assert_eq!(spec.sizes(200_000), [160_000, 20_000, 20_000]);
        assert_eq!(spec.sizes(0), [0, 0, 0]);
        assert_eq!(spec.sizes(7), [5, 0, 2]);
    }

    #[test]
    fn spec_errors() {
        assert!(SplitSpec::new(0.8, 0.1, 0.2, 0).is_err());
        assert!(SplitSpec::new(1.0, 0.0, 0.0, 0).is_err());
        assert!("0.8/0.1".parse::<SplitSpec>().is_err());
        assert_eq!("0.8, 0.1, 0.1".parse::<SplitSpec>().unwrap().train_fraction, 0.8);
    }

    #[test]
    fn deterministic_episode_split() {
        let eps: Vec<_> = (0..10)
            .map(|i| episode(&format!("e{i}"), Relationship::Neighbors, 2, 1))
            .collect();
        let spec = SplitSpec::new(0.8, 0.1, 0.1, 11).unwrap();
        let a = split_corpus(eps.clone(), &spec).unwrap();
        let b = split_corpus(eps, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (8, 1, 1));
    }

    proptest! {
        #[test]
        fn disjoint_and_exhaustive(n in 0usize..500, seed in any::<u64>(), t in 0.05f64..0.9) {
            let rest = 1.0 - t;
            let spec = SplitSpec::new(t, rest / 2.0, rest / 2.0, seed).unwrap();
            let parts = split_indices(n, &spec).unwrap();
            let all: BTreeSet<usize> = parts.iter().flatten().copied().collect();
            prop_assert_eq!(all.len(), n);
            prop_assert_eq!(parts.iter().map(Vec::len).sum::<usize>(), n);
            prop_assert_eq!(parts[0].len(), spec.sizes(n)[0]);
        }
    }
}
