//! Sample order as a pure function of `(seed, position)`, so a resumed run
//! visits exactly the same samples as an uninterrupted one.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{AugmentConfig, Augmentation};
use crate::synthdata::derive_seed;

pub fn permutation(n: usize, seed: u64, label: &str, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed, label, epoch,
    )));
    order
}

/// An endless stream of epoch permutations cut into fixed-size batches that
/// may straddle epoch boundaries.
#[derive(Debug, Clone)]
pub struct BatchStream {
    n: usize,
    batch: usize,
    seed: u64,
    label: String,
    cached: Option<(u64, Vec<usize>)>,
}

impl BatchStream {
    pub fn new(n: usize, batch: usize, seed: u64, label: &str) -> Self {
        assert!(n > 0 && batch > 0);
        BatchStream {
            n,
            batch,
            seed,
            label: label.to_string(),
            cached: None,
        }
    }

    fn at(&mut self, global: u64) -> usize {
        let epoch = global / self.n as u64;
        let pos = (global % self.n as u64) as usize;
        if self.cached.as_ref().map(|c| c.0) != Some(epoch) {
            self.cached = Some((epoch, permutation(self.n, self.seed, &self.label, epoch)));
        }
        self.cached.as_ref().expect("cached").1[pos]
    }

    pub fn batch(&mut self, iteration: u64) -> Vec<usize> {
        let start = iteration * self.batch as u64;
        (0..self.batch as u64).map(|j| self.at(start + j)).collect()
    }
}

/// Augmentations for one batch, drawn from a stream keyed by the iteration.
pub fn augmentations(
    cfg: &AugmentConfig,
    count: usize,
    seed: u64,
    label: &str,
    iteration: u64,
) -> Vec<Augmentation> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, label, iteration));
    (0..count)
        .map(|_| Augmentation::sample(cfg, &mut rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_covers_each_epoch_once() {
        let mut s = BatchStream::new(10, 4, 1, "x");
        let mut seen: Vec<usize> = (0..5).flat_map(|i| s.batch(i)).collect();
        assert_eq!(seen.len(), 20);
        let mut first = seen[..10].to_vec();
        first.sort();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        seen.drain(..10);
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn stream_is_position_addressable() {
        let mut a = BatchStream::new(7, 3, 9, "x");
        let seq: Vec<Vec<usize>> = (0..6).map(|i| a.batch(i)).collect();
        let mut b = BatchStream::new(7, 3, 9, "x");
        assert_eq!(b.batch(4), seq[4]);
        assert_eq!(b.batch(2), seq[2]);
    }
}
