use rand::seq::SliceRandom;
use rand::Rng;

use super::TrainError;
use crate::numcore::{derived, RngStream};

/// Batch plans with the same number of examples from every editor.
///
/// An epoch is as long as the largest library needs. That library is visited
/// in a fresh shuffle (its last batch topped up by random draws); smaller ones
/// are drawn uniformly with replacement.
#[derive(Clone, Debug)]
pub struct BalancedSampler {
    sizes: Vec<usize>,
    batch_size: usize,
    rng: RngStream,
}

impl BalancedSampler {
    pub fn new(sizes: &[usize], batch_size: usize, seed: u64) -> Result<Self, TrainError> {
        if sizes.is_empty() || batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "sampler needs editors and a positive batch size".into(),
            ));
        }
        if batch_size % sizes.len() != 0 {
            return Err(TrainError::IndivisibleBatch {
                batch: batch_size,
                editors: sizes.len(),
            });
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(TrainError::InvalidConfig(format!(
                "editor {i} has no training examples"
            )));
        }
        Ok(BalancedSampler {
            sizes: sizes.to_vec(),
            batch_size,
            rng: derived(seed, "sampler"),
        })
    }

    pub fn per_editor(&self) -> usize {
        self.batch_size / self.sizes.len()
    }

    pub fn batches_per_epoch(&self) -> usize {
        let largest = self.sizes.iter().copied().max().unwrap_or(0);
        largest.div_ceil(self.per_editor())
    }

    /// One epoch: `plan[batch][editor]` lists example indices. A single editor
    /// gets plain shuffled batches, the last one possibly short.
    pub fn epoch(&mut self) -> Vec<Vec<Vec<usize>>> {
        if self.sizes.len() == 1 {
            let mut order: Vec<usize> = (0..self.sizes[0]).collect();
            order.shuffle(&mut self.rng);
            return order
                .chunks(self.batch_size)
                .map(|c| vec![c.to_vec()])
                .collect();
        }
        let per = self.per_editor();
        let n_batches = self.batches_per_epoch();
        let needed = per * n_batches;
        let largest = self.sizes.iter().copied().max().unwrap_or(0);
        let streams: Vec<Vec<usize>> = self
            .sizes
            .iter()
            .map(|&size| {
                if size == largest {
                    let mut order: Vec<usize> = (0..size).collect();
                    order.shuffle(&mut self.rng);
                    while order.len() < needed {
                        order.push(self.rng.gen_range(0..size));
                    }
                    order
                } else {
                    (0..needed).map(|_| self.rng.gen_range(0..size)).collect()
                }
            })
            .collect();
        (0..n_batches)
            .map(|b| {
                streams
                    .iter()
                    .map(|s| s[b * per..(b + 1) * per].to_vec())
                    .collect()
            })
            .collect()
    }
}
