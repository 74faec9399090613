//! Sub-seed derivation for reproducible parallel experiments.
//!
//! `derive_seed(master, path)` runs FNV-1a over the UTF-8 bytes of `path`,
//! starting from the SplitMix64 image of `master` instead of the usual
//! offset basis, and finishes with one more SplitMix64 round so that nearby
//! paths land far apart.

const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, path: &str) -> u64 {
    let mut h = splitmix64(master);
    for &b in path.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}
