//! Seed derivation. Every random stream in a run hangs off one master seed.

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Child seed for the path `parts` below `master`.
pub fn derive(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

/// Domain tags so sibling streams never collide.
pub mod tag {
    pub const PROFILE: u64 = 0x7072_6f66;
    pub const TRACE: u64 = 0x7472_6163;
    pub const NETWORK: u64 = 0x6e65_7477;
    pub const TIMER: u64 = 0x7469_6d65;
    pub const RISK: u64 = 0x7269_736b;
    pub const CLIENT: u64 = 0x636c_6e74;
    pub const ASSET: u64 = 0x6173_7365;
}
