//! Counter-based random streams: one ChaCha stream per (master seed, index).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent stream `index` of the generator keyed by `master_seed`. The result does not
/// depend on the order in which streams are created, so parallel work stays reproducible.
pub fn stream(master_seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}
