use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone)]
pub struct Batch {
    /// `[N, C, H, W]`
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Positions in the source dataset.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Index order for one epoch: identity without shuffling, otherwise a
/// permutation drawn from `(seed, epoch)`.
pub fn epoch_order(len: usize, shuffle: bool, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        let stream = derive_seed(derive_seed(seed, SHUFFLE_STREAM), epoch as u64);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream));
    }
    order
}

/// Splits one epoch into batches of `batch_size`; the last may be short.
pub fn batches(ds: &Dataset, batch_size: usize, shuffle: bool, seed: u64, epoch: usize) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if ds.is_empty() {
        return Err(Error::Validation("cannot batch an empty dataset".into()));
    }
    epoch_order(ds.len(), shuffle, seed, epoch)
        .chunks(batch_size)
        .map(|idx| {
            Ok(Batch {
                images: ds.stack(idx)?,
                labels: idx.iter().map(|&i| ds.samples()[i].label).collect(),
                indices: idx.to_vec(),
            })
        })
        .collect()
}
