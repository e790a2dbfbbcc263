//! Reproducible per-trajectory random streams.
//!
//! Every trajectory draws from ChaCha8 keyed by the root seed, with the
//! 64-bit ChaCha stream id selecting the trajectory. Streams never overlap,
//! so trajectories can run in any order or concurrently.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamSeed {
    pub root: u64,
    pub stream: u64,
}

impl StreamSeed {
    pub fn new(root: u64, stream: u64) -> Self {
        StreamSeed { root, stream }
    }

    /// Stream id layout used by ensembles: bits 32.. evaluation index,
    /// bits 24..32 eigenstate index, bits 0..24 trajectory index.
    pub fn for_trajectory(root: u64, evaluation: u64, state: u64, trajectory: u64) -> Self {
        debug_assert!(state < 256 && trajectory < (1 << 24));
        StreamSeed {
            root,
            stream: (evaluation << 32) | (state << 24) | trajectory,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(self.stream);
        rng
    }
}
