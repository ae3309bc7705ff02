use crate::error::{Error, Result};
use crate::rng::{permutation, Purpose, Streams};

/// Positions into the labeled and unlabeled sets for one training step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchIndices {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Deterministic epoch-wise batching of a labeled and an unlabeled pool.
///
/// An epoch has `ceil(max(|labeled|, |unlabeled|) / B)` batches. Each pool
/// is permuted once per epoch from `(seed, epoch)` and read cyclically, so
/// the shorter pool repeats and every batch carries exactly `B` of each.
/// A pool smaller than `B` repeats within a batch. An empty unlabeled pool
/// yields empty unlabeled batches.
#[derive(Clone, Debug)]
pub struct BatchSchedule {
    n_labeled: usize,
    n_unlabeled: usize,
    batch_size: usize,
    streams: Streams,
}

impl BatchSchedule {
    pub fn new(n_labeled: usize, n_unlabeled: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batches: batch size must be >= 1".into()));
        }
        if n_labeled == 0 {
            return Err(Error::InvalidArgument("batches: labeled pool is empty".into()));
        }
        Ok(BatchSchedule {
            n_labeled,
            n_unlabeled,
            batch_size,
            streams: Streams::new(seed),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n_labeled.max(self.n_unlabeled).div_ceil(self.batch_size)
    }

    pub fn labeled_permutation(&self, epoch: u64) -> Vec<usize> {
        permutation(
            self.n_labeled,
            &mut self.streams.stream(Purpose::ShuffleLabeled, epoch, 0),
        )
    }

    pub fn unlabeled_permutation(&self, epoch: u64) -> Vec<usize> {
        permutation(
            self.n_unlabeled,
            &mut self.streams.stream(Purpose::ShuffleUnlabeled, epoch, 0),
        )
    }

    /// All batches of one epoch, in order.
    pub fn epoch(&self, epoch: u64) -> Vec<BatchIndices> {
        let lp = self.labeled_permutation(epoch);
        let up = self.unlabeled_permutation(epoch);
        let b = self.batch_size;
        (0..self.batches_per_epoch())
            .map(|i| BatchIndices {
                labeled: (i * b..(i + 1) * b).map(|j| lp[j % lp.len()]).collect(),
                unlabeled: if up.is_empty() {
                    Vec::new()
                } else {
                    (i * b..(i + 1) * b).map(|j| up[j % up.len()]).collect()
                },
            })
            .collect()
    }

    /// Infinite sequence of batches across epochs.
    pub fn stream(&self) -> impl Iterator<Item = BatchIndices> + '_ {
        (0u64..).flat_map(move |e| self.epoch(e))
    }
}
