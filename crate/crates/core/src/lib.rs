//! Spatially robust evaluation of geospatial regression models.

pub mod conformal;
pub mod data;
pub mod featsel;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod quantile;
pub mod spatial;
pub mod splitting;
pub mod stats;
pub mod synth;

pub use matrix::Matrix;

/// Derives an independent stream seed from a base seed and an index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
