//! Deterministic random dataset splits. The small datasets here are split
//! several times and metrics averaged across the splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Train/validation/test fractions; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.7, val: 0.15, test: 0.15 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(Error::Config(format!("split ratios out of range: {self:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Disjoint index sets covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// `num_splits` independent shuffled splits of `0..n`, deterministic per
/// seed. Sizes follow the largest-remainder rounding of the ratios, so exact
/// ratios give exact counts.
pub fn make_splits(
    n: usize,
    ratios: SplitRatios,
    num_splits: usize,
    seed: u64,
) -> Result<Vec<SplitIndices>> {
    ratios.validate()?;
    if n == 0 || num_splits == 0 {
        return Err(Error::Config("need at least one sample and one split".into()));
    }
    let counts = apportion(n, &[ratios.train, ratios.val, ratios.test]);
    let mut out = Vec::with_capacity(num_splits);
    for split in 0..num_splits {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(split as u64));
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let train = idx[..counts[0]].to_vec();
        let val = idx[counts[0]..counts[0] + counts[1]].to_vec();
        let test = idx[counts[0] + counts[1]..].to_vec();
        out.push(SplitIndices { train, val, test });
    }
    Ok(out)
}

/// Largest-remainder apportionment of `n` into parts proportional to `ratios`.
fn apportion(n: usize, ratios: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|&v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..(n - assigned) {
        counts[order[i % ratios.len()]] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_ratios_give_exact_sizes() {
        let splits = make_splits(100, SplitRatios::default(), 1, 9).unwrap();
        assert_eq!(splits[0].train.len(), 70);
        assert_eq!(splits[0].val.len(), 15);
        assert_eq!(splits[0].test.len(), 15);
    }

    #[test]
    fn splits_are_disjoint_covers() {
        for n in [7, 23, 100] {
            let splits = make_splits(n, SplitRatios::default(), 3, 4).unwrap();
            for s in &splits {
                let mut all: Vec<usize> =
                    s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
                all.sort_unstable();
                let expect: Vec<usize> = (0..n).collect();
                assert_eq!(all, expect);
            }
        }
    }

    #[test]
    fn same_seed_same_splits() {
        let a = make_splits(50, SplitRatios::default(), 5, 123).unwrap();
        let b = make_splits(50, SplitRatios::default(), 5, 123).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn five_splits_differ_on_fixture() {
        // Frozen fixture: n=20, seed=2024. All five pairs differ.
        let splits = make_splits(20, SplitRatios::default(), 5, 2024).unwrap();
        for i in 0..splits.len() {
            for j in i + 1..splits.len() {
                assert_ne!(splits[i], splits[j], "splits {i} and {j} identical");
            }
        }
    }

    #[test]
    fn bad_ratios_rejected() {
        let r = SplitRatios { train: 0.5, val: 0.2, test: 0.2 };
        assert!(make_splits(10, r, 1, 0).is_err());
    }
}
