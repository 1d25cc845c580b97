//! Deterministic seed derivation.
//!
//! All randomness in the system flows from one root seed through this mixer,
//! so independent consumers (per-case generation, per-sample noise draws,
//! per-frame inference noise) get decorrelated streams whose identity does not
//! depend on execution order.

/// Mixes a base seed with a sequence of salt words (splitmix64 finalizer).
pub fn derive(base: u64, words: &[u64]) -> u64 {
    let mut state = base ^ 0x9e37_79b9_7f4a_7c15;
    for &w in words {
        state = state.wrapping_add(w).wrapping_add(0x9e37_79b9_7f4a_7c15);
        state = mix(state);
    }
    mix(state)
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable numeric tags distinguishing the purposes a seed can serve.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const CASE: u64 = 2;
    pub const SAMPLE: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const INFER: u64 = 5;
}
