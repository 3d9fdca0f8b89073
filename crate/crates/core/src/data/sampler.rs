use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{streams, RunRng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Position of the sampler within the epoch sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct SamplerState {
    pub epoch: u64,
    pub cursor: usize,
}

/// Draws batches without replacement within an epoch. Epoch `e` uses a
/// permutation that depends only on the run seed and `e`, so the whole
/// batch stream is a pure function of `(dataset, seed)` and resuming needs
/// nothing beyond [`SamplerState`].
#[derive(Clone, Debug)]
pub struct BatchSampler {
    seed: u64,
    state: SamplerState,
    order: Vec<usize>,
}

impl BatchSampler {
    pub fn new(seed: u64, dataset_len: usize) -> Self {
        Self::resume(seed, dataset_len, SamplerState::default())
    }

    pub fn resume(seed: u64, dataset_len: usize, state: SamplerState) -> Self {
        BatchSampler {
            seed,
            state,
            order: Self::permutation(seed, state.epoch, dataset_len),
        }
    }

    pub fn permutation(seed: u64, epoch: u64, len: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        let mut rng = RunRng::new(seed, streams::EPOCH_BASE + epoch);
        order.shuffle(&mut rng);
        order
    }

    pub fn state(&self) -> SamplerState {
        self.state
    }

    pub fn dataset_len(&self) -> usize {
        self.order.len()
    }

    /// Indices of the next `batch_size` items, rolling into the next epoch as needed.
    pub fn next_indices(&mut self, batch_size: usize) -> Result<Vec<usize>> {
        if self.order.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut out = Vec::with_capacity(batch_size);
        while out.len() < batch_size {
            if self.state.cursor >= self.order.len() {
                self.state.epoch += 1;
                self.state.cursor = 0;
                self.order = Self::permutation(self.seed, self.state.epoch, self.order.len());
            }
            out.push(self.order[self.state.cursor]);
            self.state.cursor += 1;
        }
        Ok(out)
    }

    /// Next `[batch, C, H, W]` batch.
    pub fn next_batch<T: Scalar>(&mut self, dataset: &dyn Dataset, batch_size: usize) -> Result<Tensor<T>> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if dataset.len() != self.order.len() {
            return Err(Error::Config(format!(
                "sampler built for {} items, dataset has {}",
                self.order.len(),
                dataset.len()
            )));
        }
        let [c, h, w] = dataset.image_shape();
        let mut data = Vec::with_capacity(batch_size * c * h * w);
        for i in self.next_indices(batch_size)? {
            data.extend(dataset.item(i)?.into_iter().map(T::from_acc));
        }
        Tensor::from_vec(vec![batch_size, c, h, w], data)
    }
}
