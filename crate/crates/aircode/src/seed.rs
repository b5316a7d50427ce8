//! Deterministic seed derivation.
//!
//! Every random stream in the crate is keyed off one root seed. Sub-streams
//! (per training step, per object identity, per frame) use `derive`, so the
//! streams are independent of each other and of iteration order.

/// splitmix64 finalizer; bijective on u64.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed from `root` for the stream named by `tag`.
pub fn derive(root: u64, tag: u64) -> u64 {
    splitmix64(root ^ splitmix64(tag))
}

/// Two-level derivation for streams indexed by a pair (e.g. step then object).
pub fn derive2(root: u64, tag_a: u64, tag_b: u64) -> u64 {
    derive(derive(root, tag_a), tag_b)
}
