//! Seed derivation for independent random streams.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of stream `index` from a base seed. Streams with different
/// indices are statistically independent, and the result does not depend on
/// the order in which streams are created.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix64(mix64(base) ^ mix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Seed for a stream keyed by several integers (grid cells, per-fault models).
pub fn derive_seed_multi(base: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(base, |acc, &k| derive_seed(acc, k))
}
