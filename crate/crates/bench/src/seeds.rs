//! Seed derivation. Every random stream of a run is
//! `splitmix64(master ^ splitmix64(stream))` for a fixed stream id, so rows
//! are independent of each other and of execution order.

pub const TEST_SPLIT: u64 = 1;
pub const SYNTH_DATA: u64 = 2;

/// One output of the splitmix64 generator seeded at `z`.
pub fn splitmix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

/// Stream id of a (model, K) row.
pub fn row_stream(model_index: u64, k: usize) -> u64 {
    0x1000 + (model_index << 20) + k as u64
}
