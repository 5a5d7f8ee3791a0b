//! Per-material visual attribute transfer.
//!
//! Trains a small per-material U-Net on a photometric stack (one material
//! imaged under many directional lights) plus one aligned attribute map
//! (normals, segmentation or color), then transfers that attribute to
//! arbitrary-size guidance images of the same material under unseen
//! illumination and affine distortion.
//!
//! The crate is organized bottom-up:
//! - [`tensor`]: reverse-mode autodiff over 4-axis tensors and Adam
//! - [`unet`]: the shallow encoder-decoder realizing the mapping
//! - [`photometry`]: light rigs, Lambertian rendering, photometric stereo
//! - [`augment`]: the joint image/attribute augmentation policy
//! - [`trainer`]: the patch-based training loop and checkpoints
//! - [`eval`]: tiled inference, metrics, equivariance and degradation harnesses
//! - [`config`]: plain-text run configuration

pub mod augment;
pub mod config;
pub mod eval;
pub mod photometry;
pub mod tensor;
pub mod trainer;
pub mod unet;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum PxfrError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
}

impl PxfrError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        PxfrError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, PxfrError>;

/// Derives an independent seed for a named substream (FNV-1a over the
/// label mixed into the base seed), so every random consumer hangs off a
/// single run seed without sharing a stream.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed.wrapping_mul(0x9e3779b97f4a7c15)
}

/// A ChaCha stream for the named substream of `seed`.
pub fn seed_stream(seed: u64, label: &str) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}
