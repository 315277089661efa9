//! Conditional generative modeling with a variational generator.
//!
//! The crate trains conditional GANs whose generator is an encoder-decoder
//! pair: the encoder infers a latent posterior from the class condition and
//! a noise vector alone, the decoder maps latent samples to data, and a
//! discriminator with a shared K+2-unit head scores realness and class
//! membership jointly. Baseline generator variants (plain concatenation,
//! conditional batch normalization, a conditional VAE) train under the same
//! harness for side-by-side comparison, and evaluation ships with exact
//! Inception-score and Frechet-distance implementations backed by a
//! locally trained classifier.
//!
//! Modules:
//! - [`diffcore`]: reverse-mode autodiff, layer primitives, Adam.
//! - [`probdist`]: diagonal Gaussians, KL, truncated sampling, moment fits.
//! - [`models`]: the generator variants and the shared discriminator.
//! - [`training`]: loss assembly, alternating updates, checkpoints.
//! - [`metrics`]: classifier training, Inception score, Frechet distance.
//! - [`harness`]: datasets, configuration, experiment orchestration, CLI.

pub mod diffcore;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod probdist;
pub mod rng;
pub mod training;

pub use rng::Rng;
