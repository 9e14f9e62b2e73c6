//! Named random sub-streams derived from one root seed.
//!
//! Every consumer of randomness asks for a [`Stream`] and an index (scene
//! number, frame number, epoch, ...). The result is a ChaCha generator keyed
//! by the root seed and positioned on a stream id built from the pair, so
//! draws for one (stream, index) never depend on how many draws another
//! consumer made or on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Scene = 1,
    Frame = 2,
    Augment = 3,
    Sampler = 4,
    Init = 5,
    BatchOrder = 6,
    Theory = 7,
    Resample = 8,
}

/// Generator for `(stream, index)` under `seed`.
pub fn stream(seed: u64, which: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 8 bits of stream tag, 56 bits of index.
    rng.set_stream(((which as u64) << 56) | (index & ((1 << 56) - 1)));
    rng
}

/// Derive a child seed, e.g. one seed per scene from a dataset seed.
pub fn child_seed(seed: u64, which: Stream, index: u64) -> u64 {
    use rand::RngCore;
    stream(seed, which, index).next_u64()
}
