//! Deterministic seed derivation.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a sub-task (record, repetition, block) of a seeded computation.
/// Independent of the order in which sub-tasks are scheduled.
pub fn derive_seed(base: u64, key: u64) -> u64 {
    splitmix64(splitmix64(base) ^ key.rotate_left(17) ^ 0x5851_f42d_4c95_7f2d)
}

/// Seed derived from a string label, for named pipeline stages.
pub fn derive_seed_str(base: u64, label: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    derive_seed(base, h)
}
