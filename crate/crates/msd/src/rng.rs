//! Seeded random-number streams.
//!
//! Every source of randomness in the library is a [`Stream`]: a ChaCha8
//! generator keyed by hashing a global seed together with a path of integer
//! tags (epoch, task index, view index, ...). Streams are independent of
//! iteration order, so task-level parallelism cannot change what any task
//! draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Tag constants naming the purpose of a derived stream.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const TASK: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const VALIDATE: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const PROBE: u64 = 7;
}

/// A derivation path for a random stream: a global seed plus integer tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stream {
    seed: u64,
    path: Vec<u64>,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream { seed, path: Vec::new() }
    }

    /// Extends the derivation path with one more tag.
    pub fn child(&self, tag: u64) -> Self {
        let mut path = self.path.clone();
        path.push(tag);
        Stream { seed: self.seed, path }
    }

    #[must_use]
    pub fn with(&self, tags: &[u64]) -> Self {
        let mut path = self.path.clone();
        path.extend_from_slice(tags);
        Stream { seed: self.seed, path }
    }

    /// Instantiates the generator for this path.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(b"msd-stream");
        hasher.update(self.seed.to_le_bytes());
        for t in &self.path {
            hasher.update(t.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(key)
    }
}

/// One-shot helper: `stream(seed, &[tags...]).rng()`.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    Stream::new(seed).with(tags).rng()
}
