//! Sparse-coding variational autoencoder with an unrolled ISTA (LISTA)
//! latent coder over a fixed DCT dictionary.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] / [`autodiff`]: dense tensors and a reverse-mode tape.
//! * [`dictionary`]: overcomplete DCT dictionary and its Lipschitz bound.
//! * [`solvers`]: ISTA/FISTA reference solvers and the trainable LISTA coder.
//! * [`model`]: encoder, per-location sparse coding, decoder and losses.
//! * [`training`]: Adam, the training loop, datasets, config and checkpoints.
//! * [`metrics`]: PSNR, SSIM, Hoyer sparsity, IoU/DICE.
//! * [`downstream`]: code editing, k-means, spectral segmentation.
//! * [`cli`]: the `scvae` command-line tool.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod dictionary;
pub mod downstream;
pub mod error;
pub mod gradcheck;
pub mod imageio;
pub mod metrics;
pub mod model;
pub mod solvers;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
