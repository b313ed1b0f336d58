//! Named random streams.
//!
//! Every run derives its generators from one seed; each consumer gets its own
//! ChaCha stream so that, e.g., changing the noise level never perturbs the
//! shuffle order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Noise = 3,
    Task = 4,
    Split = 5,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
