//! Deterministic derivation of per-task RNG seeds.
//!
//! Parallel units of work (trees, forest replicates, tie shuffles) each get
//! their own seed derived from a base seed and a stream index, so parallel
//! and serial execution produce identical results.

/// splitmix64 finalizer; decorrelates nearby inputs.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed for stream `stream` of the task family
/// identified by `domain` under `base`.
pub fn derive_seed(base: u64, domain: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base ^ domain.wrapping_mul(0xD1B5_4A32_D192_ED03)).wrapping_add(stream))
}

/// Stream-family tags; distinct constants keep seed spaces disjoint.
pub mod domains {
    pub const SPLIT: u64 = 1;
    pub const GBDT_TREE: u64 = 2;
    pub const FOREST_TREE: u64 = 3;
    pub const FOREST_REPLICATE: u64 = 4;
    pub const TIE_SHUFFLE: u64 = 5;
    pub const SUBSAMPLE: u64 = 6;
    pub const SHAP_SAMPLE: u64 = 7;
}
