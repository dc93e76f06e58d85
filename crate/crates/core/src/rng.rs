//! Reproducible random streams.
//!
//! Every stochastic component draws from ChaCha8, a counter-based stream
//! cipher RNG. Parallel replicas split streams by `(seed, replica id)`:
//! the seed keys the cipher and the replica id selects the 64-bit stream,
//! so replica draws never overlap and results are independent of
//! scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A `(seed, stream)` pair naming one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSeed {
    pub seed: u64,
    pub stream: u64,
}

impl StreamSeed {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Stream for one replica of an experiment.
    pub fn replica(base_seed: u64, replica_id: u64) -> Self {
        Self {
            seed: base_seed,
            stream: replica_id,
        }
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

impl From<u64> for StreamSeed {
    fn from(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }
}
