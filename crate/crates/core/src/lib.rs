//! Multi-perspective one-class anomaly detection.
//!
//! Deep SVDD on top of a small reverse-mode tensor engine, with three ways of
//! fusing several camera perspectives of one object:
//!
//! * **early** fusion stacks the views channel-wise before the encoder,
//! * **late** fusion encodes every view with one shared encoder and averages
//!   the embeddings,
//! * **late fusion with dual decoders** pretrains the shared encoder with one
//!   decoder per view.
//!
//! Shallow baselines (PCA + OC-SVM / KDE / Isolation Forest), dataset
//! builders, metrics and a successive-halving hyperparameter search complete
//! the experimental harness.

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod hpo;
pub mod ndgrad;
pub mod nets;
pub mod svdd;

pub use error::{Error, ErrorKind, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for every random draw in the crate.
pub type Rng = ChaCha8Rng;

/// Builds the crate generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed (splitmix64 finaliser over both inputs).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
