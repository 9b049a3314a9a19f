//! Building blocks for auditing the privacy of small classifiers: a
//! deterministic neural-network engine, SGD-family trainers (including
//! DP-SGD and smoothed clipped gradients), privacy accounting, sampled
//! sensitivity estimation, output perturbation and membership inference.

pub mod accounting;
pub mod data;
pub mod error;
pub mod gpm;
pub mod mia;
pub mod nn;
pub mod rng;
pub mod sensitivity;
pub mod trainer;

pub use error::{Error, Result};

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`, truncated to 16 characters.
pub fn fingerprint(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}
