//! Named random sub-streams derived from one user seed.
//!
//! Every consumer of randomness draws from its own ChaCha stream so that,
//! for example, changing the number of sampled negatives never perturbs the
//! parameter initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Negatives = 2,
    Synth = 3,
    Split = 4,
    Bench = 5,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
