//! Deterministic sub-seed derivation (SplitMix64 finaliser).

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream named by `parts` under `base`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix(base.wrapping_add(0x9e37_79b9_7f4a_7c15)), |acc, &p| {
            mix(acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15))
        })
}
