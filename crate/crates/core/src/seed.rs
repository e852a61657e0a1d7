//! Counter-based seeding.
//!
//! A master seed keys a ChaCha20 stream; chain `i` takes its seed from
//! stream `i`, so the seed a chain receives depends only on `(master, i)` and
//! never on the order in which chains are scheduled.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSequence {
    master: u64,
}

impl SeedSequence {
    pub fn new(master: u64) -> Self {
        SeedSequence { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn chain(&self, index: u64) -> u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(self.master);
        rng.set_stream(index);
        rng.next_u64()
    }

    pub fn chains(&self, n: usize) -> Vec<u64> {
        (0..n as u64).map(|i| self.chain(i)).collect()
    }
}

/// Generator driving one sampling chain.
pub fn chain_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
