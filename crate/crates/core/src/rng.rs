//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! `sha256(master_seed, label)` and selected by a 64-bit stream index. The
//! mapping `(seed, label, index) -> stream` does not depend on scheduling,
//! so results are identical for any worker-pool size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Master seed from which labelled, indexed streams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Independent stream for `(label, index)`.
    pub fn stream(&self, label: &str, index: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::from_seed(self.key(label));
        rng.set_stream(index);
        rng
    }

    /// A derived 64-bit seed, for APIs that take a plain `u64`.
    pub fn derive(&self, label: &str, index: u64) -> u64 {
        let mut h = Sha256::new();
        h.update(self.key(label));
        h.update(index.to_le_bytes());
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
    }

    /// Child tree for a nested experiment.
    pub fn child(&self, label: &str, index: u64) -> SeedTree {
        SeedTree::new(self.derive(label, index))
    }

    fn key(&self, label: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.master.to_le_bytes());
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        h.finalize().into()
    }
}

/// Convenience: a single stream from a plain seed.
pub fn stream_from_seed(seed: u64, label: &str) -> StreamRng {
    SeedTree::new(seed).stream(label, 0)
}
