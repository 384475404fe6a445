//! Seed derivation for independent, reproducible random streams.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sequence `index` under `master`: `mix64(master ^ index)`.
pub fn sequence_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ index)
}

/// Independent sub-stream `stream` of a sequence seed.
pub fn substream(seed: u64, stream: u64) -> u64 {
    mix64(seed.wrapping_add(mix64(stream)))
}
