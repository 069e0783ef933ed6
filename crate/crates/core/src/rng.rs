//! Counter-based random streams.
//!
//! Every replicate of every study draws from its own ChaCha stream, keyed by
//! `(seed, domain)` and selected by the replicate index, so the draws of a
//! replicate do not depend on which thread runs it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains; distinct studies never share a key.
pub mod domain {
    pub const BOOTSTRAP: u64 = 0xB007_5742;
    pub const BIAS: u64 = 0xB1A5;
    pub const COVERAGE: u64 = 0xC0FE_4A6E;
    pub const DESIGN: u64 = 0xDE51_6E;
    pub const FIXTURE: u64 = 0xF1C5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines key words into one 64-bit key.
pub fn derive_key(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x5EED_u64, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Independent stream `index` under `key`.
pub fn stream(key: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
