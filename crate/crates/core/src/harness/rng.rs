//! Seeded random streams. Each purpose gets its own ChaCha stream, and each
//! draw site is addressed by a counter, so adding a consumer never shifts
//! the numbers another consumer sees and a resumed run reproduces them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Data = 2,
    Latent = 3,
    Interpolation = 4,
    Projection = 5,
    EvalData = 6,
    EvalLatent = 7,
    EvalProjection = 8,
}

/// Generator for `(seed, purpose, counter)`. Distinct counters are 2^32
/// words apart, far more than any single draw site consumes.
pub fn stream(seed: u64, purpose: Purpose, counter: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(purpose as u64);
    r.set_word_pos((counter as u128) << 32);
    r
}
