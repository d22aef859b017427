//! GAN training with likelihood-based fitness measures.
//!
//! The crate fits a univariate Gaussian to the discriminator's embeddings of
//! real images and scores each batch of generated images by how likely its
//! mean embedding is under that Gaussian (a difference and a min/max ratio
//! of the two likelihoods). Everything needed to produce those measures is
//! built here on a small reverse-mode autodiff core:
//!
//! - [`autodiff`]: tensors, convolution/transposed convolution, batch norm,
//!   activations and a finite-difference gradient checker.
//! - [`networks`]: the DCGAN-style generator and discriminator and the
//!   embedding extractor.
//! - [`objectives`]: vanilla, least-squares and Wasserstein losses, the L2
//!   penalty, weight clipping and a Lipschitz probe.
//! - [`measures`]: the Gaussian embedding model, the two fitness measures and
//!   embedding histograms.
//! - [`trainer`]: Adam, the critic/generator update schedule and run output.
//! - [`data`]: CIFAR-10 binary loading, synthetic blob images, batching and
//!   noise sampling.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! unsuffixed aliases below fix it to `f64`, the default precision.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod measures;
pub mod metrics;
pub mod networks;
pub mod objectives;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{LeganError, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape = autodiff::Tape<f64>;
pub type Generator = networks::Generator<f64>;
pub type Discriminator = networks::Discriminator<f64>;
pub type GaussianModel = measures::GaussianModel<f64>;
pub type Gan = trainer::Gan<f64>;
