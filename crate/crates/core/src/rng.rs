//! Named random substreams derived from a single root seed.
//!
//! Every consumer of randomness (data generation, parameter init, episode
//! sampling, batching) asks for `stream(root, name, index)`, so results
//! never depend on call order or on which worker drew first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Well-known stream names.
pub mod streams {
    pub const DATA: &str = "data";
    pub const INIT: &str = "init";
    pub const EPISODES: &str = "episodes";
    pub const BATCHES: &str = "batches";
    pub const DROPOUT: &str = "dropout";
    pub const SPLIT: &str = "split";
    pub const PROBE: &str = "probe";
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Seed of substream `(name, index)` under `root`.
pub fn derive_seed(root: u64, name: &str, index: u64) -> u64 {
    splitmix(splitmix(root ^ fnv1a(name)) ^ splitmix(index.wrapping_add(0x5851_f42d)))
}

pub fn stream(root: u64, name: &str, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, name, index))
}
