//! Acoustic scene classification with channel-boosted i-vectors, a
//! convolutional spectrogram classifier, and score-level fusion.
//!
//! The crate is organized as a pipeline:
//!
//! * [`audio`]: WAV loading, stereo channel sources, dataset manifests.
//! * [`features`]: boosted MFCC extraction and log mel spectrograms.
//! * [`gmm`]: diagonal-covariance GMM background models and sufficient
//!   statistics.
//! * [`ivector`]: total-variability training and i-vector extraction.
//! * [`backend`]: LDA/WCCN projection, class models, cosine scoring.
//! * [`cnn`]: a small VGG-style network trained on spectrogram excerpts.
//! * [`fusion`]: multi-class linear-logistic score fusion.
//! * [`pipeline`]: cross-validated experiment driver tying it all together.
//!
//! The `examples/` directory walks through each stage on synthetic data; start
//! with `examples/cross_validation.rs` for the end-to-end picture.

pub mod audio;
pub mod backend;
pub mod cnn;
pub mod container;
pub mod error;
pub mod features;
pub mod fusion;
pub mod gmm;
pub mod ivector;
pub mod linalg;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
