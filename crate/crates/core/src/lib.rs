//! Score-based any-to-many voice conversion.
//!
//! A noise-level- and speaker-conditional convolutional score network is
//! trained with weighted denoising score matching on normalized
//! mel-cepstral feature sequences. Conversion runs annealed Langevin
//! dynamics starting from the source utterance, moving it toward a nearby
//! high-density point of the target speaker's feature distribution.
//!
//! Module map:
//! - [`tensor`]: dense tensors and the reverse-mode tape
//! - [`score_net`]: the conditional U-Net and its checkpoint format
//! - [`noise`]: noise schedule, denoising score matching loss, Adam, training
//! - [`langevin`]: annealed Langevin sampling and conversion
//! - [`features`]: feature files, speaker statistics and normalization
//! - [`eval`]: DTW-aligned mel-cepstral distortion and synthetic validation
//! - [`cli`]: the `scorevc` command-line workflows

mod binio;
pub mod cli;
mod error;
pub mod eval;
pub mod features;
pub mod langevin;
pub mod noise;
pub mod score_net;
pub mod tensor;

pub use error::{Error, FormatError, Result};

/// Seeded generator used for every random draw in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
