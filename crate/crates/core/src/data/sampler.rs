use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::rng::{derive_seed, rng_from_seed};

/// Endless stream of dataset indices in seeded shuffled epochs: epoch `e` is
/// a permutation drawn from `derive_seed(seed, e)`, so position `i` of the
/// stream depends only on `(seed, len, i)`.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    len: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    position: u64,
}

impl EpochSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        Self::starting_at(len, seed, 0)
    }

    /// A sampler that has already emitted `position` indices.
    pub fn starting_at(len: usize, seed: u64, position: u64) -> Self {
        let mut s = Self { len, seed, epoch: u64::MAX, order: Vec::new(), position };
        if len > 0 {
            s.load_epoch(position / len as u64);
        }
        s
    }

    pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng_from_seed(derive_seed(seed, epoch)));
        order
    }

    fn load_epoch(&mut self, epoch: u64) {
        if self.epoch != epoch {
            self.order = Self::epoch_order(self.len, self.seed, epoch);
            self.epoch = epoch;
        }
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn next_index(&mut self) -> Option<usize> {
        if self.len == 0 {
            return None;
        }
        let len = self.len as u64;
        self.load_epoch(self.position / len);
        let idx = self.order[(self.position % len) as usize];
        self.position += 1;
        Some(idx)
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size).filter_map(|_| self.next_index()).collect()
    }
}
