//! Deterministic seed derivation so every randomized stage (fold shuffles,
//! init, dropout masks, neighbor sampling) draws from its own stream while
//! the whole pipeline stays a pure function of one root seed.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a root seed and a label path, e.g.
/// `derive_seed(seed, &[FOLD, fold_idx, epoch])`.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut acc = splitmix64(base);
    for &p in path {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

/// Stream labels for the stages that consume randomness. Keeping them in
/// one place guards against two stages silently sharing a stream.
pub mod stream {
    pub const FOLD_SHUFFLE: u64 = 1;
    pub const PARAM_INIT: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const NEIGHBOR_SAMPLE: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const BATCH_SHUFFLE: u64 = 6;
}
