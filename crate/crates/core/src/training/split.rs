use rand::seq::SliceRandom;

use super::TrainError;
use crate::data::LibraryDataset;
use crate::numcore::derived;

pub const MIN_SPLIT_REFERENCES: usize = 10;

/// Train / validation / test fractions and the seeds of the repeated splits.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
    pub replicate_seeds: [u64; 3],
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            fractions: [0.8, 0.1, 0.1],
            replicate_seeds: [0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: LibraryDataset,
    pub val: LibraryDataset,
    pub test: LibraryDataset,
}

/// Partition references (never individual outcome rows). Each part keeps the
/// dataset's original reference order.
pub fn split_dataset(
    ds: &LibraryDataset,
    spec: &SplitSpec,
    seed: u64,
) -> Result<DatasetSplit, TrainError> {
    let n = ds.references.len();
    if n < MIN_SPLIT_REFERENCES {
        return Err(TrainError::TooFewReferences {
            found: n,
            needed: MIN_SPLIT_REFERENCES,
        });
    }
    let [a, b, c] = spec.fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(TrainError::InvalidConfig(format!(
            "split fractions {:?} must be in [0,1] and sum to 1",
            spec.fractions
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived(seed, "split"));
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_val = ((b * n as f64).round() as usize).min(n - n_train);
    let part = |range: &[usize]| {
        let mut idx = range.to_vec();
        idx.sort_unstable();
        ds.select(&idx)
    };
    Ok(DatasetSplit {
        train: part(&order[..n_train]),
        val: part(&order[n_train..n_train + n_val]),
        test: part(&order[n_train + n_val..]),
    })
}
