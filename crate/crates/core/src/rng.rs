//! Named random streams derived from one root seed.
//!
//! Each stage of an experiment draws from its own ChaCha stream, selected by
//! hashing the stage name, so a stage can be re-run on its own and still see
//! exactly the numbers it saw inside a full pipeline run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A generator for the stream `name` under `root_seed`.
pub fn stream(root_seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(fnv1a(name));
    rng
}
