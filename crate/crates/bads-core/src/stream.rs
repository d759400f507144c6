//! Epoch-shuffled minibatch index streams.

use crate::rng::Rng;

/// Cycles through `n` indices in seeded random order, reshuffling at every
/// epoch boundary. Emits fixed-size batches; a trailing remainder that
/// cannot fill a batch is dropped and the next epoch begins.
#[derive(Debug, Clone)]
pub struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: Rng,
}

impl BatchStream {
    pub fn new(n: usize, batch: usize, rng: Rng) -> Self {
        assert!(batch >= 1 && batch <= n, "batch size must be in [1, n]");
        let mut s = BatchStream {
            order: (0..n).collect(),
            pos: 0,
            batch,
            rng,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.rng.shuffle(&mut self.order);
        self.pos = 0;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.reshuffle();
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }

    pub fn dataset_len(&self) -> usize {
        self.order.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_is_a_permutation() {
        let mut s = BatchStream::new(12, 4, Rng::new(5));
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_per_seed() {
        let mut a = BatchStream::new(20, 6, Rng::new(9));
        let mut b = BatchStream::new(20, 6, Rng::new(9));
        for _ in 0..10 {
            assert_eq!(a.next_batch(), b.next_batch());
        }
    }

    #[test]
    fn remainder_dropped_and_epoch_restarts() {
        let mut s = BatchStream::new(10, 4, Rng::new(1));
        let b1 = s.next_batch();
        let b2 = s.next_batch();
        let b3 = s.next_batch(); // only 2 left, so this starts a new epoch
        assert_eq!(b1.len(), 4);
        assert_eq!(b2.len(), 4);
        assert_eq!(b3.len(), 4);
    }
}
