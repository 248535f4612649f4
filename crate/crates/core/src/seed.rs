//! Sub-seed derivation so that one run seed drives every random stage.

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed for a named stage (and optional index) of a run.
pub fn derive_seed(seed: u64, stage: &str, index: u64) -> u64 {
    let mut h = mix(seed);
    for b in stage.bytes() {
        h = mix(h ^ u64::from(b));
    }
    mix(h ^ index)
}
