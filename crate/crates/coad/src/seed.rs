//! Deterministic derivation of per-component RNG streams.
//!
//! Every random draw in the testbed flows from an explicit seed through
//! this mixer, so toggling one component (a source, a metric, the
//! detector) never perturbs the stream of another.

/// SplitMix64 finalizer; stable across platforms.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a sequence of labels/indices.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &part in parts {
        state = splitmix64(state ^ splitmix64(part));
    }
    state
}

/// Stream labels used by the harness and the world simulator.
pub mod stream {
    pub const WORLD: u64 = 0x01;
    pub const SCENES: u64 = 0x02;
    pub const DETECT: u64 = 0x03;
    pub const DECODE: u64 = 0x04;
    pub const MC: u64 = 0x05;
    pub const POPE: u64 = 0x06;
    pub const DIV_CONTEXTS: u64 = 0x07;
    pub const BOOTSTRAP: u64 = 0x08;
    pub const PERCEPT: u64 = 0x09;
}
