//! Counter-based random streams.
//!
//! Every random object in the crate (a replica, the particle count at a
//! vertex, one particle's walk) is driven by its own generator whose seed is a
//! hash of a fixed key path such as `(master seed, replica, vertex, particle)`.
//! Two runs that ask for the same key see the same numbers regardless of the
//! order in which keys are visited or the thread that visits them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate.
pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child key from a parent key and a counter.
#[inline]
pub fn derive(parent: u64, counter: u64) -> u64 {
    mix64(parent.wrapping_add(GOLDEN).wrapping_mul(GOLDEN) ^ mix64(counter.wrapping_add(GOLDEN)))
}

/// Derives a key from a path of counters.
pub fn derive_path(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(root), |k, &c| derive(k, c))
}

/// FNV-1a hash of a label, for mixing names (experiment names, purposes) into keys.
pub fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3))
}

/// A generator for the given key.
pub fn stream(key: u64) -> StreamRng {
    StreamRng::seed_from_u64(key)
}

/// A uniform in [0, 1) read directly off a key, without building a generator.
#[inline]
pub fn unit_from_key(key: u64) -> f64 {
    (mix64(key) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Seed of replica `r` of a run: split of (master seed, experiment hash, r).
pub fn replica_seed(master: u64, experiment: &str, replica: u64) -> u64 {
    derive_path(master, &[label_hash(experiment), replica])
}
