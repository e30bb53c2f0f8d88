//! Seedable generator shared by every stochastic routine.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Independent stream `index` derived from a top-level `seed`.
pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Stream indices reserved for each pipeline stage so stages never share draws.
pub mod stage {
    pub const SIMULATE: u64 = 1;
    pub const SYNTHESIZE: u64 = 2;
    pub const CHANNELS: u64 = 3;
    pub const ENSEMBLE_BASE: u64 = 1 << 32;
}
