//! Deterministic random streams.
//!
//! Every Monte Carlo consumer draws from its own ChaCha stream keyed by the
//! master seed plus a tuple of tags (purpose, time index, series or draw
//! index). Results are therefore independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream purposes. Distinct tags keep e.g. marginal-likelihood draws from
/// perturbing the filter.
pub mod purpose {
    pub const UPDATE: u64 = 0x5550_4454;
    pub const MARGLIK: u64 = 0x4d41_5247;
    pub const FORECAST: u64 = 0x4643_5354;
    pub const MIXTURE: u64 = 0x4d49_5854;
    pub const ENSEMBLE: u64 = 0x454e_534d;
    pub const COMPLETE: u64 = 0x434d_504c;
    pub const SUMMARY: u64 = 0x5355_4d4d;
    pub const SIMULATE: u64 = 0x5349_4d55;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    let mut key = splitmix(seed);
    for &tag in tags {
        key = splitmix(key ^ splitmix(tag));
    }
    ChaCha8Rng::seed_from_u64(key)
}
