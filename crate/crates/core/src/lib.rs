//! Self-supervised denoising from single noisy images.
//!
//! Training pairs are produced by a random neighbor sub-sampler: the noisy
//! image is split into `k x k` cells, and two adjacent pixels of each cell
//! are gathered into two half-resolution images. A small U-Net style
//! denoiser is trained to map one sub-image onto the other, with a
//! regularizer that corrects for the ground-truth gap between neighbors.
//!
//! Modules:
//! - [`imaging`]: image container, PNG/PGM/PPM I/O, random crops.
//! - [`noise`]: synthetic Gaussian and Poisson noise models.
//! - [`subsampler`]: neighbor and fix-location sub-samplers.
//! - [`network`]: differentiable convolutional denoiser with checkpoints.
//! - [`training`]: reconstruction/regularizer losses, Adam, training loop.
//! - [`metrics`]: PSNR, SSIM and related image statistics.
//! - [`theory`]: Monte-Carlo checks of the gap-corrected identity and the
//!   ideal-denoiser constraint.
//! - [`textures`]: procedural test scenes.

pub mod container;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod network;
pub mod noise;
pub mod subsampler;
pub mod textures;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
pub use imaging::Image;
pub use network::{ArchDescriptor, Network, Tensor4};
pub use noise::NoiseModel;
pub use subsampler::{SamplerKind, SubSampler};
pub use training::TrainConfig;


/// Deterministic random stream used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's random stream from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Builds an independent random stream for `(seed, stream)`.
///
/// Used wherever work is split into units (epochs, Monte-Carlo chunks) that
/// must draw the same numbers regardless of how they are scheduled.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(stream);
    rng
}
