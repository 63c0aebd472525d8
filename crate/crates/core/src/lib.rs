//! Breathing-phase classification from single-channel thermal images.
//!
//! The crate is organised along the processing chain:
//!
//! - [`imaging`]: grayscale conversion, resizing, tri-level thresholding,
//!   augmentation and normalization of thermograms, plus PGM/PNG IO.
//! - [`autodiff`]: a small dense tensor type with a reverse-mode tape and the
//!   layer operations the networks need.
//! - [`network`]: the residual source model, the transfer target model built
//!   on top of it, and the affine parameter adaptation between the two.
//! - [`objectives`]: cross-entropy, the adaptation penalty, and the
//!   pairwise contrastive loss.
//! - [`classical`]: linear SVM, random forest and the weighted score ensemble.
//! - [`pipeline`]: datasets, the synthetic thermogram generator, training and
//!   the gradual fine-tuning schedules.
//! - [`eval`]: metrics, the ablation harness and report writers.

pub mod autodiff;
pub mod classical;
pub mod config;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod network;
pub mod objectives;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
